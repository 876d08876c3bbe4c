/**
 * Typed client for the clickseg3d annotation service (HTTP+JSON).
 *
 * Coordinates are meters; label arrays are aligned to the upload order of
 * the scene's points. All mask state lives on the server -- this client
 * never computes or modifies labels.
 */

export interface ScenePayload {
  points: number[][];
  colors?: number[][] | null;
  labels?: number[] | null;
}

export interface SessionInfo {
  session_id: string;
  num_points: number;
  num_voxels: number;
  backbone_ms: number;
  has_color: boolean;
  has_labels: boolean;
}

export interface OutgoingClick {
  x: number;
  y: number;
  z: number;
  region: number;
}

export interface MaskResponse {
  session_id: string;
  labels: number[];
  num_clicks: number;
  decode_ms: number;
  per_object_iou?: Record<string, number>;
}

export interface SceneData {
  session_id: string;
  points: number[][];
  colors: number[][] | null;
}

export interface ExportData {
  session_id: string;
  labels: number[];
  clicks: { x: number; y: number; z: number; region: number; timestamp: number }[];
  checkpoint: string;
}

export class ServiceError extends Error {
  constructor(
    readonly status: number,
    detail: string,
  ) {
    super(detail);
    this.name = "ServiceError";
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  let resp: Response;
  try {
    resp = await fetch(url, init);
  } catch (err) {
    throw new ServiceError(0, `service unreachable: ${String(err)}`);
  }
  const body = await resp.json().catch(() => ({}));
  if (!resp.ok) {
    const detail =
      typeof body === "object" && body !== null && "detail" in body
        ? String((body as { detail: unknown }).detail)
        : resp.statusText;
    throw new ServiceError(resp.status, detail);
  }
  return body as T;
}

export class AnnotationClient {
  constructor(readonly baseUrl: string) {}

  private url(path: string): string {
    return this.baseUrl.replace(/\/$/, "") + path;
  }

  healthz(): Promise<{ status: string }> {
    return request(this.url("/healthz"));
  }

  modelInfo(): Promise<{ checkpoint: string; config: Record<string, unknown> }> {
    return request(this.url("/model"));
  }

  /** Open a session from an inline scene or a server-side scene id. */
  createSession(scene: ScenePayload | { scene_id: string }): Promise<SessionInfo> {
    const body = "scene_id" in scene ? scene : { scene: scene };
    return request(this.url("/sessions"), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  /** Fetch point data for rendering (needed for scene_id sessions). */
  sceneData(sessionId: string): Promise<SceneData> {
    return request(this.url(`/sessions/${sessionId}/scene`));
  }

  /** Send one or more clicks; the server assigns timestamps. */
  addClicks(sessionId: string, clicks: OutgoingClick[]): Promise<MaskResponse> {
    return request(this.url(`/sessions/${sessionId}/clicks`), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ clicks }),
    });
  }

  undo(sessionId: string): Promise<MaskResponse> {
    return request(this.url(`/sessions/${sessionId}/undo`), { method: "POST" });
  }

  mask(sessionId: string): Promise<{ session_id: string; labels: number[]; num_clicks: number }> {
    return request(this.url(`/sessions/${sessionId}/mask`));
  }

  exportJson(sessionId: string): Promise<ExportData> {
    return request(this.url(`/sessions/${sessionId}/export?format=json`));
  }
}
