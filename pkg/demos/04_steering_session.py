"""Scripted steering session against a live HTTP service.

Spins up the steering service in-process, then drives the human-in-the-loop
workflow over plain HTTP: create a session, rank latent dimensions by SNR,
preview diverse proposals along the top dimension, and repeatedly execute
the proposal whose previewed endpoint is closest to the goal until the
episode ends.

Run:  python3 demos/04_steering_session.py
"""

import json
import threading
import urllib.request

import numpy as np

from manex import (
    LatentGaussian,
    PolicyConfig,
    SteeringService,
    TrainConfig,
    VibConfig,
    compute_snr,
    generate_demos,
    make_env_config,
    make_server,
    train,
)

env_cfg = make_env_config("planar-reach", expert_bias=0.9)
demos = generate_demos(env_cfg, n=10, seed=100)
bundle = train(
    demos,
    env_cfg.obs_dim,
    env_cfg.act_dim,
    PolicyConfig(embed_dim=32, hidden=48),
    VibConfig(latent_dim=8, hidden=64),
    TrainConfig(iterations=1500, seed=0),
    env_name=env_cfg.name,
    max_step=env_cfg.max_step,
)

rows = np.concatenate([r.observations for r in demos])
emb = bundle.policy.encode_observation(rows)
g = bundle.plugin.encode_latent(emb)
snr_doc = compute_snr(
    [LatentGaussian(mu=g.mu[i], sigma=g.sigma[i]) for i in range(rows.shape[0])]
).to_dict(0.0)

service = SteeringService(bundle, env_cfg, snr_doc=snr_doc)
server = make_server(service, port=0)
port = server.server_address[1]
threading.Thread(target=server.serve_forever, daemon=True).start()
base = f"http://127.0.0.1:{port}"
print(f"service listening on {base}")


def get(path):
    with urllib.request.urlopen(base + path) as resp:
        return json.loads(resp.read())


def post(path, doc):
    req = urllib.request.Request(
        base + path,
        data=json.dumps(doc).encode(),
        headers={"Content-Type": "application/json"},
        method="POST",
    )
    with urllib.request.urlopen(req) as resp:
        return json.loads(resp.read())


sess = post("/api/sessions", {"seed": 901})
goal = np.asarray(sess["goal"])
print(f"session {sess['id']}: robot {sess['robot']}, goal {sess['goal']}")

dims = get(f"/api/sessions/{sess['id']}/dimensions")
top = dims["dims"][0]
print(f"top latent dimension: {top['index']} at {top['snr_db']:.1f} dB")

state = sess
for step in range(12):
    props = get(f"/api/sessions/{sess['id']}/proposals?dim={top['index']}&batch=24&k=6")
    ends = np.array([p["trajectory"][-1] for p in props["proposals"]])
    pick = int(np.argmin(np.linalg.norm(ends - goal, axis=1)))
    chosen = props["proposals"][pick]
    state = post(f"/api/sessions/{sess['id']}/select", {"proposal_id": chosen["id"]})
    print(
        f"chunk {step}: picked offset {chosen['offset']:+.2f}, "
        f"robot now {np.round(state['robot'], 3).tolist()}, step {state['step']}"
    )
    if state["done"]:
        break

print(f"\nepisode done: success={state['success']} after {state['step']} steps")
history = get(f"/api/sessions/{sess['id']}/history")["history"]
print("history provenance:", [h["provenance"].split(":")[0] for h in history])
server.shutdown()
