"""Drive the annotation HTTP service the way the browser UI does.

Starts the FastAPI app in-process (no network needed), opens a session on
a synthetic scene, sends clicks, undoes one, and exports the final mask.
Against a real deployment you would run `clickseg3d serve checkpoint.npz`
and point the frontend (or this script, via httpx) at it.

Run after demo 02: python3 demos/04_serve_and_annotate.py /tmp/demo_model.npz
"""

import json
import sys

from fastapi.testclient import TestClient

from clickseg3d.model import InteractiveSegmentationModel
from clickseg3d.service import create_app

ckpt = sys.argv[1] if len(sys.argv) > 1 else "/tmp/demo_model.npz"
model = InteractiveSegmentationModel.load(ckpt)
client = TestClient(create_app(model))

# one backbone pass happens here; later requests only decode
session = client.post("/sessions", json={"scene_id": "synthetic-7"}).json()
sid = session["session_id"]
print(
    f"session {sid[:8]}...: {session['num_points']} points, "
    f"{session['num_voxels']} voxels, backbone {session['backbone_ms']:.0f} ms"
)

for x, y, z, region in [
    (0.5, 0.5, 0.2, 1),   # claim an object
    (1.2, 0.8, 0.3, 2),   # claim a second one
    (0.9, 0.9, 0.0, 0),   # mark some floor as background
]:
    body = client.post(
        f"/sessions/{sid}/clicks",
        json={"clicks": [{"x": x, "y": y, "z": z, "region": region}]},
    ).json()
    print(
        f"click region {region}: {body['num_clicks']} clicks so far, "
        f"decode {body['decode_ms']:.0f} ms"
    )

undone = client.post(f"/sessions/{sid}/undo").json()
print(f"undo -> {undone['num_clicks']} clicks")

export = client.get(f"/sessions/{sid}/export?format=json").json()
labeled = sum(1 for v in export["labels"] if v != 0)
print(
    f"export: {labeled}/{len(export['labels'])} points labeled, "
    f"{len(export['clicks'])} clicks in the log"
)
print("click log:", json.dumps(export["clicks"]))
