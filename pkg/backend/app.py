from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field
import numpy as np
import logging
from typing import Dict, List, Optional, Union
import os
from datetime import datetime

from . import __version__
from .exceptions import TsaError, DatasetError
from .llm import LlmModel, decision_margins, feature_weights, load_model

# Configure logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

DEFAULT_MODEL_PATH = os.path.join(os.path.dirname(__file__), "models", "tsa_model.json")

app = FastAPI(title="Transient Stability Assessment Service", version=__version__)

app.add_middleware(
    CORSMiddleware,
    allow_origins=[
        "http://localhost:5173",
        "http://127.0.0.1:5173",
        "http://localhost:3000",
        "http://127.0.0.1:3000",
    ],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# Loaded classifier, None until startup succeeds
model: Optional[LlmModel] = None
model_path: Optional[str] = None


class StabilityRequest(BaseModel):
    features: Union[List[float], Dict[str, float]] = Field(
        ..., description="Feature vector in model order, or a mapping of feature name to value")


class StabilityResponse(BaseModel):
    label: int
    stable: bool
    margin: float
    timestamp: str


class FeatureWeightsResponse(BaseModel):
    weights: List[Dict[str, Union[str, float]]]
    lambda_: float = Field(alias="lambda")
    sigma: float


def load_stability_model(path: Optional[str] = None) -> bool:
    """Load the classifier from ``path`` (or TSA_MODEL_PATH)"""
    global model, model_path

    model_path = path or os.environ.get("TSA_MODEL_PATH", DEFAULT_MODEL_PATH)
    try:
        model = load_model(model_path)
        logger.info(f"Stability model loaded from {model_path} ({len(model.feature_names)} features)")
        return True
    except TsaError as e:
        model = None
        logger.error(f"Error loading stability model: {e}")
        return False


@app.on_event("startup")
async def startup_event():
    load_stability_model()


@app.get("/")
async def root():
    return {"message": "Transient Stability Assessment API", "version": __version__}


@app.get("/health")
async def health_check():
    return {
        "status": "healthy",
        "model_loaded": model is not None,
        "model_path": model_path,
        "n_features": len(model.feature_names) if model is not None else 0,
        "timestamp": datetime.now().isoformat(),
    }


def _feature_vector(request: StabilityRequest) -> np.ndarray:
    names = model.feature_names
    if isinstance(request.features, dict):
        missing = [name for name in names if name not in request.features]
        unknown = [name for name in request.features if name not in names]
        if missing or unknown:
            raise DatasetError(f"feature names do not match the model (missing {missing[:5]}, unknown {unknown[:5]})")
        return np.array([request.features[name] for name in names], dtype=float)
    return np.asarray(request.features, dtype=float)


@app.post("/assess-stability", response_model=StabilityResponse)
async def assess_stability(request: StabilityRequest):
    """Classify one post-fault operating point as stable (+1) or unstable (-1)"""
    if model is None:
        raise HTTPException(status_code=503, detail="Model not loaded. Please train a model first.")
    try:
        margin = float(decision_margins(model, _feature_vector(request)))
    except DatasetError as e:
        logger.error(f"Rejected stability request: {e}")
        raise HTTPException(status_code=422, detail=str(e))
    label = 1 if margin > 0 else -1
    return StabilityResponse(label=label, stable=label == 1, margin=margin,
                             timestamp=datetime.now().isoformat())


@app.get("/feature-weights", response_model=FeatureWeightsResponse, response_model_by_alias=True)
async def get_feature_weights():
    if model is None:
        raise HTTPException(status_code=503, detail="Model not loaded. Please train a model first.")
    return FeatureWeightsResponse(
        weights=[{"feature": name, "weight": w} for name, w in feature_weights(model)],
        **{"lambda": model.hyper.lambda_},
        sigma=model.hyper.sigma,
    )


if __name__ == "__main__":
    import uvicorn
    uvicorn.run(app, host="0.0.0.0", port=8000)
