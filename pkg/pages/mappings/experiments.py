# Reference experiments shipped under configs/
# Single source of truth for config paths and viewer titles
EXPERIMENT_CONFIGS = {
    "LANDAU_T2": {
        "name": "landau_t2",
        "title": "Constant field on T²",
        "config": "configs/landau_t2.json",
        "description": "B = 2π on the unit torus, φ = exp(-λ). The trace is exactly the Landau sum.",
    },
    "FREE_T2": {
        "name": "free_t2",
        "title": "Free T²",
        "config": "configs/free_t2.json",
        "description": "No field: the Weyl term 1/(4π).",
    },
    "LANDAU_T3": {
        "name": "landau_t3",
        "title": "Rank-2 field on T³",
        "config": "configs/landau_t3.json",
        "description": "Degenerate magnetic matrix, one free direction, KPM traces.",
    },
    "VARIABLE_T2": {
        "name": "variable_t2",
        "title": "Variable potential on T²",
        "config": "configs/variable_t2.json",
        "description": "V = 0.5 cos(2πx₁) with B = 2π; genuine half-power corrections.",
    },
    "DECAY_FREE": {
        "name": "decay_free",
        "title": "Decay, free",
        "config": "configs/decay_free.json",
        "description": "|K(x, x')| at distance 0.5 without field.",
    },
    "DECAY_LANDAU": {
        "name": "decay_landau",
        "title": "Decay, B = 2π",
        "config": "configs/decay_landau.json",
        "description": "|K(x, x')| at distance 0.5 with constant field.",
    },
    "MODEL_CHECK": {
        "name": "model_check",
        "title": "Model operator checks",
        "config": "configs/model_check.json",
        "description": "Box discretizations of the model operator and the resolvent-integral oracle.",
    },
}


def get_experiment_title(name: str) -> str:
    for cfg in EXPERIMENT_CONFIGS.values():
        if cfg["name"] == name:
            return cfg["title"]
    return name
