"""Drive the HTTP surface end to end in-process: train a model, query it,
then iterate what-if probes the way the browser explorer does.

Run: python3 demos/06_http_service.py
(or start a real server with `treeoracle serve` and use curl)
"""

from fastapi.testclient import TestClient

from treeoracle.service import ServiceConfig, create_app

client = TestClient(create_app(ServiceConfig()))

schema = {
    "features": [{"name": "glucose", "kind": "numeric", "vocabulary": None},
                 {"name": "fasting", "kind": "boolean", "vocabulary": None}],
    "label": {"name": "flag", "vocabulary": ["normal", "elevated"]},
}
rows = [
    {"glucose": 82, "fasting": True, "flag": "normal"},
    {"glucose": 90, "fasting": True, "flag": "normal"},
    {"glucose": 105, "fasting": False, "flag": "normal"},
    {"glucose": 131, "fasting": True, "flag": "elevated"},
    {"glucose": 150, "fasting": True, "flag": "elevated"},
    {"glucose": 162, "fasting": False, "flag": "elevated"},
]

train = client.post("/v1/train", json={"schema": schema, "rows": rows,
                                       "params": {"max_depth": 3}}).json()
print("trained:", train["summary"])

query = client.post("/v1/query", json={
    "model_id": train["model_id"],
    "record": {"glucose": 128, "fasting": True},
    "overrides": {"seed": 1},
}).json()
print(f"\nanswer: {query['answer']}")
print("verbal:", query["verbalization"])

episode_id = query["episode_id"]
for mods in ({"glucose": 95.0}, {"fasting": False}, {"glucose": 170.0}):
    probe = client.post("/v1/whatif", json={"episode_id": episode_id,
                                            "modifications": mods}).json()
    result = probe["result"]
    print(f"\nwhat-if {mods} -> {result['after']['outcome']}"
          f" (diverges at step {result['changed_steps']['divergence_index']},"
          f" log length {probe['whatif_log_length']})")

trace = client.get(f"/v1/trace/{episode_id}?format=text")
print("\nepisode trace:")
print(trace.text)
