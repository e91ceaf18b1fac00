"""Rule-of-thumb choice of K for K-shot training and adaptation."""
from __future__ import annotations

FEATURE_LEVELS = ("low", "medium", "high")
TASKS = ("train", "device-adapt", "version-adapt")
UPGRADES = ("minor", "major")


def recommend_shot_method(features: str, task: str, time_constrained: bool = False,
                          upgrade: str | None = None) -> int:
    """Return 1, 2 or 5."""
    if features not in FEATURE_LEVELS:
        raise ValueError(f"features must be one of {FEATURE_LEVELS}")
    if task not in TASKS:
        raise ValueError(f"task must be one of {TASKS}")
    if task == "version-adapt":
        if upgrade not in UPGRADES:
            raise ValueError("version-adapt needs upgrade=minor|major")
    elif upgrade is not None:
        raise ValueError("upgrade applies only to version-adapt")
    high = features == "high"
    if task == "train":
        if time_constrained:
            return 2 if high else 1
        return 5 if high else 2
    if task == "version-adapt":
        if upgrade == "minor":
            return 1
        return 5 if high else 2
    return {"low": 1, "medium": 2, "high": 5}[features]
