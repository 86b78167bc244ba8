import time

import pytest
from fastapi.testclient import TestClient

from recosim import presets
from recosim.scenario import spec_to_text
from recosim.service import create_app


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app())


def tiny_config() -> str:
    spec = presets.with_overrides(
        presets.validation(), channels=2, items_per_channel=10,
        nodes_per_community=8, duration=20_000.0)
    return spec_to_text(spec)


class TestScenarioEndpoints:
    def test_healthz(self, client):
        body = client.get("/healthz").json()
        assert body["status"] == "ok"

    def test_generate_preset(self, client):
        resp = client.post("/scenarios/generate", json={"preset": "table3"})
        assert resp.status_code == 200
        body = resp.json()
        assert body["summary"]["nodes"] == 45
        assert body["summary"]["travellers"] == 6
        assert body["violations"] == []
        assert "[scenario]" in body["config_text"]

    def test_generate_requires_exactly_one_source(self, client):
        resp = client.post("/scenarios/generate",
                           json={"preset": "table3", "config_text": "x"})
        assert resp.status_code == 422

    def test_generate_unknown_preset(self, client):
        resp = client.post("/scenarios/generate", json={"preset": "nope"})
        assert resp.status_code == 422

    def test_validate_reports_spec_problems(self, client):
        bad = tiny_config().replace("oc_capacity = 5", "oc_capacity = 0")
        resp = client.post("/scenarios/validate", json={"config_text": bad})
        assert resp.status_code == 200
        assert any("oc_capacity" in v for v in resp.json()["violations"])

    def test_validate_rejects_unknown_keys(self, client):
        resp = client.post("/scenarios/validate",
                           json={"config_text": "[scenario]\nwat = 1\n"})
        assert resp.status_code == 422


class TestRunEndpoints:
    def test_des_run(self, client):
        resp = client.post("/runs/des", json={"config_text": tiny_config(),
                                              "replicas": 2})
        assert resp.status_code == 200
        body = resp.json()
        assert 0.0 <= body["final_hit_rate"] <= 1.0
        assert body["hitrate_csv"].startswith("time_s,scope,value,replica")
        assert body["replication_csv"].startswith("step,time_s,channel_rank")

    def test_hybrid_run_and_compare(self, client):
        resp = client.post("/runs/hybrid", json={"config_text": tiny_config(),
                                                 "replicas": 2})
        assert resp.status_code == 200
        csv_text = resp.json()["hitrate_csv"]
        gaps = client.post("/compare", json={"csv_a": csv_text,
                                             "csv_b": csv_text}).json()
        assert gaps == {"max_abs_gap": 0.0, "mean_abs_gap": 0.0,
                        "final_gap": 0.0}

    def test_hybrid_recognition_toggle(self, client):
        resp = client.post("/runs/hybrid",
                           json={"config_text": tiny_config(),
                                 "channel_recognition": False})
        assert resp.status_code == 200

    def test_analytic_run(self, client):
        cfg = spec_to_text(presets.single_community_model_validation())
        resp = client.post("/runs/analytic", json={"config_text": cfg})
        assert resp.status_code == 200
        body = resp.json()
        assert body["converged"]
        assert len(body["classes"]) == 3
        rs = [c["r"] for c in body["classes"]]
        assert max(rs) - min(rs) < 1e-6
        assert body["trace_csv"].startswith(
            "step,time_s,channel_rank,item_class,r,p_sc,p_oc")

    def test_run_rejects_invalid_scenario(self, client):
        bad = tiny_config().replace("channels = 2", "channels = 0")
        resp = client.post("/runs/hybrid", json={"config_text": bad})
        assert resp.status_code == 422


class TestJobs:
    def test_submit_poll_fetch(self, client):
        resp = client.post("/jobs/hybrid", json={"config_text": tiny_config()})
        job_id = resp.json()["job_id"]
        for _ in range(200):
            status = client.get(f"/jobs/{job_id}").json()
            if status["status"] in ("done", "error"):
                break
            time.sleep(0.05)
        assert status["status"] == "done"
        result = client.get(f"/jobs/{job_id}/result")
        assert result.status_code == 200
        assert result.json()["engine"] == "hybrid"

    def test_unknown_job_404(self, client):
        assert client.get("/jobs/deadbeef").status_code == 404

    def test_failed_job_surfaces_error(self, client):
        bad = tiny_config().replace("channels = 2", "channels = 0")
        job_id = client.post("/jobs/des",
                             json={"config_text": bad}).json()["job_id"]
        for _ in range(200):
            status = client.get(f"/jobs/{job_id}").json()
            if status["status"] in ("done", "error"):
                break
            time.sleep(0.05)
        assert status["status"] == "error"
        assert client.get(f"/jobs/{job_id}/result").status_code == 422
