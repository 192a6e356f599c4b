import pytest
from fastapi.testclient import TestClient
from project.server import app


@pytest.fixture
def client():
    return TestClient(app)


def _node(x):
    return {"x": x, "y": 0.0, "mass": 1.0}


def test_simulate_single_node(client) -> None:
    response = client.post(
        "/simulate",
        json={"genome": {"nodes": [_node(0.0)], "edges": []}, "controller": [], "episode_steps": 50},
    )

    assert response.status_code == 200
    body = response.json()
    assert body["objective"] == 0.0
    assert body["steps_consumed"] == 50
    assert body["complexity"] == 0


def test_simulate_rejects_a_mismatched_controller(client) -> None:
    genome = {
        "nodes": [_node(0.0), _node(0.3)],
        "edges": [{"a": 0, "b": 1, "rest_length": 0.3, "stiffness": 500.0, "actuated": True}],
    }
    response = client.post(
        "/simulate", json={"genome": genome, "controller": [0.1], "episode_steps": 50}
    )

    assert response.status_code == 400
    assert "controller" in response.json()["error"]


def test_analysis_without_a_manifest_is_a_client_error(client, tmp_path) -> None:
    response = client.post("/analysis/exp1", json={"out_dir": str(tmp_path)})

    assert response.status_code == 400


def test_unknown_experiment_is_rejected(client, tmp_path) -> None:
    response = client.post("/analysis/exp9", json={"out_dir": str(tmp_path)})

    assert response.status_code == 422


def test_replay_of_a_missing_log_is_a_server_error(client, tmp_path) -> None:
    response = client.post(
        "/replay", json={"runlog_path": str(tmp_path / "arm_0.csv"), "row_index": 0}
    )

    assert response.status_code == 500
    assert "not found" in response.json()["error"]
