#!/usr/bin/env python3
"""Tests for the stability assessment API"""
import sys

import numpy as np
import pytest
from fastapi.testclient import TestClient

from backend.app import app
from backend.dataset import Dataset
from backend.llm import LlmHyperparams, predict, save_model, train


@pytest.fixture
def model_file(tmp_path):
    rng = np.random.default_rng(0)
    labels = np.array([1] * 15 + [-1] * 15)
    features = np.column_stack([labels * 3.0 + rng.standard_normal(30), rng.standard_normal(30)])
    model = train(Dataset(features, labels, ("Tz1", "Tz2")), LlmHyperparams(1.0, 1.0))
    return model, save_model(model, tmp_path / "model.json")


@pytest.fixture
def client(model_file, monkeypatch):
    monkeypatch.setenv("TSA_MODEL_PATH", str(model_file[1]))
    with TestClient(app) as test_client:
        yield test_client


def test_root_and_health(client, model_file):
    assert client.get("/").status_code == 200
    health = client.get("/health").json()
    assert health["status"] == "healthy"
    assert health["model_loaded"] is True
    assert health["n_features"] == 2
    assert health["model_path"] == str(model_file[1])


def test_assess_stability_with_vector(client, model_file):
    model, _ = model_file
    for point in ([3.0, 0.0], [-3.0, 0.5]):
        response = client.post("/assess-stability", json={"features": point})
        assert response.status_code == 200
        body = response.json()
        assert body["label"] == predict(model, point)
        assert body["stable"] == (body["label"] == 1)
        assert (body["margin"] > 0) == body["stable"]


def test_assess_stability_with_named_features(client):
    by_name = client.post("/assess-stability", json={"features": {"Tz2": 0.0, "Tz1": 3.0}}).json()
    by_position = client.post("/assess-stability", json={"features": [3.0, 0.0]}).json()
    assert by_name["label"] == by_position["label"] == 1
    assert by_name["margin"] == pytest.approx(by_position["margin"])


def test_assess_stability_rejects_bad_vectors(client):
    assert client.post("/assess-stability", json={"features": [1.0, 2.0, 3.0]}).status_code == 422
    assert client.post("/assess-stability", json={"features": {"Tz1": 1.0}}).status_code == 422
    assert client.post("/assess-stability", json={}).status_code == 422


def test_feature_weights(client, model_file):
    model, _ = model_file
    body = client.get("/feature-weights").json()
    assert body["lambda"] == 1.0 and body["sigma"] == 1.0
    assert [w["feature"] for w in body["weights"]][0] == "Tz1"
    assert sum(w["weight"] for w in body["weights"]) == pytest.approx(float(np.sum(model.weights)))


def test_without_model(tmp_path, monkeypatch):
    monkeypatch.setenv("TSA_MODEL_PATH", str(tmp_path / "missing.json"))
    with TestClient(app) as client:
        assert client.get("/health").json()["model_loaded"] is False
        assert client.post("/assess-stability", json={"features": [0.0, 0.0]}).status_code == 503
        assert client.get("/feature-weights").status_code == 503


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
