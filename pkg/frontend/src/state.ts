/**
 * Client-side session state and the single-flight click pipeline.
 *
 * Invariants:
 *  - The UI never computes labels. Every entry in the round history is a
 *    verbatim server response; replay and undo only re-display or re-request.
 *  - At most one HTTP request is in flight per session. Clicks placed while
 *    a request is pending are queued and sent together as one batch (the
 *    service accepts click lists and assigns consecutive timestamps).
 */

import {
  AnnotationClient,
  MaskResponse,
  OutgoingClick,
  ScenePayload,
  ServiceError,
  SessionInfo,
} from "./api.js";

export type ColorMode = "rgb" | "mask" | "blended";

export interface CameraPose {
  position: [number, number, number];
  target: [number, number, number];
}

export interface ClickRecord extends OutgoingClick {
  timestamp: number;
}

/** One server round: the mask after the first `numClicks` clicks. */
export interface Round {
  numClicks: number;
  labels: number[];
  decodeMs: number;
}

export interface ViewState {
  camera: CameraPose;
  pointSize: number;
  colorMode: ColorMode;
  activeRegion: number;
  sessionId: string | null;
  /** rounds[0] is the pre-click mask; rounds[i] follows the i-th response. */
  rounds: Round[];
  clicks: ClickRecord[];
  /** Index into rounds currently displayed; null means live (latest). */
  viewingRound: number | null;
}

export function initialViewState(): ViewState {
  return {
    camera: { position: [2.5, -2.5, 2.0], target: [0, 0, 0.3] },
    pointSize: 3,
    colorMode: "blended",
    activeRegion: 1,
    sessionId: null,
    rounds: [],
    clicks: [],
    viewingRound: null,
  };
}

export interface SessionEvents {
  /** Fired whenever the displayed mask should change. */
  onMask(labels: number[], clicks: ClickRecord[]): void;
  onError(message: string): void;
  onStats(stats: {
    numPoints: number;
    numVoxels: number;
    backboneMs: number;
    lastDecodeMs: number | null;
    numClicks: number;
    queued: number;
  }): void;
}

export class AnnotationSession {
  readonly state: ViewState = initialViewState();
  points: number[][] = [];
  colors: number[][] | null = null;
  private info: SessionInfo | null = null;
  private pendingClicks: OutgoingClick[] = [];
  private inFlight = false;

  constructor(
    private readonly client: AnnotationClient,
    private readonly events: SessionEvents,
  ) {}

  get busy(): boolean {
    return this.inFlight || this.pendingClicks.length > 0;
  }

  get queuedCount(): number {
    return this.pendingClicks.length;
  }

  /** Open a session from an inline scene or a server-side scene id. */
  async open(scene: ScenePayload | { scene_id: string }): Promise<SessionInfo> {
    const info = await this.client.createSession(scene);
    this.info = info;
    this.state.sessionId = info.session_id;
    if ("scene_id" in scene) {
      const data = await this.client.sceneData(info.session_id);
      this.points = data.points;
      this.colors = data.colors;
    } else {
      this.points = scene.points;
      this.colors = scene.colors ?? null;
    }
    const mask = await this.client.mask(info.session_id);
    this.state.rounds = [{ numClicks: 0, labels: mask.labels, decodeMs: 0 }];
    this.state.clicks = [];
    this.state.viewingRound = null;
    this.emitCurrent();
    return info;
  }

  /**
   * Queue a click for the given world position. Returns immediately; the
   * mask refresh arrives through the onMask event once the server responds.
   */
  placeClick(position: [number, number, number], region: number): void {
    if (this.state.sessionId === null) {
      this.events.onError("no session open");
      return;
    }
    if (this.state.viewingRound !== null) {
      // A new click always acts on the live state, not a replayed round.
      this.state.viewingRound = null;
      this.emitCurrent();
    }
    this.pendingClicks.push({
      x: position[0],
      y: position[1],
      z: position[2],
      region,
    });
    void this.drain();
    this.emitStats();
  }

  /** Drop the last click (server-side) and show the recomputed mask. */
  async undo(): Promise<void> {
    const sid = this.state.sessionId;
    if (sid === null) {
      this.events.onError("no session open");
      return;
    }
    if (this.busy) {
      this.events.onError("busy: wait for pending clicks before undoing");
      return;
    }
    if (this.state.clicks.length === 0) {
      this.events.onError("nothing to undo");
      return;
    }
    this.inFlight = true;
    try {
      const resp = await this.client.undo(sid);
      this.state.clicks.pop();
      // The recomputed mask replaces history from this click count onward.
      this.state.rounds = this.state.rounds.filter(
        (r) => r.numClicks < resp.num_clicks,
      );
      this.recordRound(resp);
    } catch (err) {
      this.events.onError(describeError(err));
    } finally {
      this.inFlight = false;
      this.emitStats();
    }
  }

  /** Display a historical round without contacting the server. */
  replayRound(index: number): void {
    if (index < 0 || index >= this.state.rounds.length) {
      this.events.onError(`no round ${index}`);
      return;
    }
    this.state.viewingRound =
      index === this.state.rounds.length - 1 ? null : index;
    this.emitCurrent();
  }

  exportLabels() {
    const sid = this.state.sessionId;
    if (sid === null) {
      return Promise.reject(new ServiceError(0, "no session open"));
    }
    return this.client.exportJson(sid);
  }

  currentLabels(): number[] {
    const index =
      this.state.viewingRound ?? Math.max(0, this.state.rounds.length - 1);
    return this.state.rounds[index]?.labels ?? [];
  }

  visibleClicks(): ClickRecord[] {
    const index =
      this.state.viewingRound ?? Math.max(0, this.state.rounds.length - 1);
    const round = this.state.rounds[index];
    if (round === undefined) {
      return [];
    }
    return this.state.clicks.slice(0, round.numClicks);
  }

  /** Resolves once no request is in flight and the queue is empty. */
  async settled(): Promise<void> {
    while (this.busy) {
      await new Promise((resolve) => setTimeout(resolve, 5));
    }
  }

  private async drain(): Promise<void> {
    if (this.inFlight) {
      return;
    }
    this.inFlight = true;
    try {
      while (this.pendingClicks.length > 0) {
        const batch = this.pendingClicks.splice(0, this.pendingClicks.length);
        const sid = this.state.sessionId;
        if (sid === null) {
          return;
        }
        let resp: MaskResponse;
        try {
          resp = await this.client.addClicks(sid, batch);
        } catch (err) {
          this.events.onError(describeError(err));
          continue;
        }
        // Server assigns timestamps consecutively from the prior count.
        const base = resp.num_clicks - batch.length;
        batch.forEach((c, i) => {
          this.state.clicks.push({ ...c, timestamp: base + i + 1 });
        });
        this.recordRound(resp);
      }
    } finally {
      this.inFlight = false;
      this.emitStats();
    }
  }

  private recordRound(resp: MaskResponse): void {
    this.state.rounds.push({
      numClicks: resp.num_clicks,
      labels: resp.labels,
      decodeMs: resp.decode_ms,
    });
    this.state.viewingRound = null;
    this.emitCurrent();
  }

  private emitCurrent(): void {
    this.events.onMask(this.currentLabels(), this.visibleClicks());
    this.emitStats();
  }

  private emitStats(): void {
    const last = this.state.rounds[this.state.rounds.length - 1];
    this.events.onStats({
      numPoints: this.info?.num_points ?? this.points.length,
      numVoxels: this.info?.num_voxels ?? 0,
      backboneMs: this.info?.backbone_ms ?? 0,
      lastDecodeMs: last !== undefined && last.numClicks > 0 ? last.decodeMs : null,
      numClicks: this.state.clicks.length,
      queued: this.pendingClicks.length,
    });
  }
}

export function describeError(err: unknown): string {
  if (err instanceof ServiceError) {
    return err.status === 0 ? err.message : `service error ${err.status}: ${err.message}`;
  }
  return String(err);
}
