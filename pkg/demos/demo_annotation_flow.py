"""A scripted volunteer session against the annotation service over HTTP.

Starts the service on a random port, walks one volunteer through the
two-step selection for an assigned image, and shows the resulting vote log
line and progress counters.
"""

import json
import tempfile
import threading
from http.client import HTTPConnection
from pathlib import Path

from epsbench.annotation import AnnotationService, make_server
from epsbench.dataset import DatasetManifest, SynthSpec, synth_generate

root = Path(tempfile.mkdtemp(prefix="epsbench_study_"))
synth_generate(SynthSpec(n_train=2, n_test=0, height=32, width=32, seed=1,
                         votes_per_image=2), root)
(root / "votes.jsonl").unlink()  # start the study with an empty log

manifest = DatasetManifest.load(root / "manifest.json")
service = AnnotationService(root, manifest, ["ann", "ben", "cam", "dee"],
                            votes_per_image=2, seed=0)
server = make_server(service, port=0)
threading.Thread(target=server.serve_forever, daemon=True).start()
port = server.server_address[1]
print(f"service on 127.0.0.1:{port}")


def call(method, path, volunteer=None, body=None):
    conn = HTTPConnection("127.0.0.1", port, timeout=5)
    headers = {"Content-Type": "application/json"}
    if volunteer:
        headers["Authorization"] = f"Bearer {volunteer}"
    conn.request(method, path, json.dumps(body) if body else None, headers)
    resp = conn.getresponse()
    doc = json.loads(resp.read())
    conn.close()
    return resp.status, doc


status, doc = call("GET", "/instructions")
print("\ninstructions shown to volunteers:")
for i, line in enumerate(doc["instructions"], 1):
    print(f"  {i}. {line}")

volunteer = "ann"
status, doc = call("GET", f"/assignment/{volunteer}", volunteer)
image = doc["pending"][0]
print(f"\n{volunteer} is assigned: {doc['pending']}")

print(f"\nstep 1 on {image}: picking a setting per method")
for m in range(1, 8):
    status, grid = call("GET", f"/images/{image}/grid/{m}")
    pick = 3 if m != 6 else 5  # pretend the volunteer prefers these
    call("POST", "/picks", volunteer,
         {"image_id": image, "method": m, "param": pick})
    print(f"  method {m}: {len(grid['candidates'])} candidates -> picked p{pick}")

status, fin = call("GET", f"/finalists/{volunteer}/{image}", volunteer)
print(f"\nstep 2: {len(fin['finalists'])} finalists side by side")
status, ack = call("POST", "/votes", volunteer,
                   {"image_id": image, "method": 6, "param": 5})
print(f"final vote recorded: method {ack['method']} setting {ack['param']}")

status, ack2 = call("POST", "/votes", volunteer,
                    {"image_id": image, "method": 6, "param": 5})
print(f"retry acknowledged as duplicate: {ack2['duplicate']}")

status, prog = call("GET", "/progress")
print(f"\nprogress: {prog['votes']} votes, completion {prog['completion']:.0%}")
print("vote log contents:")
print("  " + (root / "votes.jsonl").read_text().strip())
server.shutdown()
