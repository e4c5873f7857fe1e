"""Record real service payloads as fixtures for the frontend tests, so the
UI parity checks compare rendered values against actual API output.

Run: python3 scripts/gen_frontend_fixtures.py
Writes: frontend/fixtures/*.json
"""

from __future__ import annotations

import json
from pathlib import Path

from fastapi.testclient import TestClient

from treeoracle.service import ServiceConfig, create_app

OUT = Path(__file__).resolve().parent.parent / "frontend" / "fixtures"

SCHEMA = {
    "features": [
        {"name": "heart_rate", "kind": "numeric", "vocabulary": None},
        {"name": "temp_c", "kind": "numeric", "vocabulary": None},
        {"name": "on_oxygen", "kind": "boolean", "vocabulary": None},
    ],
    "label": {"name": "triage", "vocabulary": ["low", "urgent"]},
}

ROWS = [
    {"heart_rate": 72, "temp_c": 36.8, "on_oxygen": False, "triage": "low"},
    {"heart_rate": 80, "temp_c": 37.1, "on_oxygen": False, "triage": "low"},
    {"heart_rate": 95, "temp_c": 37.4, "on_oxygen": False, "triage": "low"},
    {"heart_rate": 99, "temp_c": 39.1, "on_oxygen": False, "triage": "urgent"},
    {"heart_rate": 118, "temp_c": 38.9, "on_oxygen": False, "triage": "urgent"},
    {"heart_rate": 125, "temp_c": 39.4, "on_oxygen": True, "triage": "urgent"},
    {"heart_rate": 132, "temp_c": 38.2, "on_oxygen": True, "triage": "urgent"},
]

XOR_SCHEMA = {
    "features": [
        {"name": "a", "kind": "boolean", "vocabulary": None},
        {"name": "b", "kind": "boolean", "vocabulary": None},
    ],
    "label": {"name": "y", "vocabulary": ["no", "yes"]},
}

XOR_ROWS = [
    {"a": False, "b": False, "y": "no"},
    {"a": False, "b": True, "y": "yes"},
    {"a": True, "b": False, "y": "yes"},
    {"a": True, "b": True, "y": "no"},
]


def dump(name: str, payload) -> None:
    OUT.joinpath(name).write_text(json.dumps(payload, indent=2, sort_keys=True),
                                  encoding="utf-8")
    print(f"wrote fixtures/{name}")


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    client = TestClient(create_app(ServiceConfig()))

    train = client.post("/v1/train", json={"schema": SCHEMA, "rows": ROWS,
                                           "params": {"max_depth": 3}}).json()
    model_id = train["model_id"]

    query = client.post("/v1/query", json={
        "model_id": model_id,
        "record": {"heart_rate": 121, "temp_c": 38.5, "on_oxygen": False},
        "overrides": {"seed": 7},
    }).json()
    episode_id = query["episode_id"]
    dump("query.json", query)

    trace = client.get(f"/v1/trace/{episode_id}?format=json").json()
    dump("trace.json", trace)

    models = client.get(f"/v1/models?episode_id={episode_id}&include=doc").json()
    dump("models.json", models)

    probes = [
        {"heart_rate": 85.0},
        {},
        {"temp_c": 39.9, "heart_rate": 140.0},
    ]
    for i, mods in enumerate(probes, start=1):
        whatif = client.post("/v1/whatif", json={
            "episode_id": episode_id, "modifications": mods}).json()
        dump(f"whatif{i}.json", whatif)

    # a second service run for the XOR model used by the tree-render tests
    xor_train = client.post("/v1/train", json={"schema": XOR_SCHEMA,
                                               "rows": XOR_ROWS,
                                               "params": {"max_depth": 2}}).json()
    xor_models = client.get("/v1/models?include=doc").json()
    xor_doc = next(m for m in xor_models["models"]
                   if m["model_id"] == xor_train["model_id"])
    dump("xor_model.json", xor_doc)

    single = client.post("/v1/train", json={
        "schema": XOR_SCHEMA,
        "rows": [{"a": True, "b": True, "y": "yes"}],
        "params": {"max_depth": 2},
    }).json()
    leaf_models = client.get("/v1/models?include=doc").json()
    leaf_doc = next(m for m in leaf_models["models"]
                    if m["model_id"] == single["model_id"])
    dump("leaf_model.json", leaf_doc)


if __name__ == "__main__":
    main()
