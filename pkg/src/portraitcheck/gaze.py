"""Landmark-based refinement of frontal-gaze decisions.

A light geometric pass over eye landmarks that can flip the
looking-away requirement from compliant to non-compliant when the iris
sits too far from the eye center. It runs only when the classifier
already deems both the head pose and the gaze compliant, and it never
flips a decision the other way.

Sidecar landmark format: a JSON object keyed by image_id, each entry
holding ``left`` and ``right`` eyes with ``iris``, ``inner`` and
``outer`` [x, y] pixel coordinates.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Mapping, Optional, Protocol

import numpy as np

from .types import DataError, Decision, Requirement

DEFAULT_TAU = 0.15


@dataclass(frozen=True)
class Eye:
    iris_center: tuple[float, float]
    corner_inner: tuple[float, float]
    corner_outer: tuple[float, float]

    def __post_init__(self):
        if tuple(self.corner_inner) == tuple(self.corner_outer):
            raise DataError("eye corners coincide")


@dataclass(frozen=True)
class EyeLandmarks:
    left: Optional[Eye]
    right: Optional[Eye]


def _eye_deviation(eye: Eye) -> float:
    inner = np.asarray(eye.corner_inner, dtype=np.float64)
    outer = np.asarray(eye.corner_outer, dtype=np.float64)
    iris = np.asarray(eye.iris_center, dtype=np.float64)
    axis = outer - inner
    norm = float(np.linalg.norm(axis))
    mid = (inner + outer) / 2.0
    # horizontal-only: project onto the corner axis, drop the vertical part
    along = float(np.dot(iris - mid, axis / norm))
    return abs(along) / norm


def gaze_deviation(landmarks: EyeLandmarks) -> float:
    """Mean normalized iris offset from the eye center, both eyes.

    Per eye, the iris offset from the corner midpoint is projected onto
    the corner axis and divided by the corner distance, so the result is
    dimensionless and invariant to translation and uniform scaling.
    """
    if landmarks.left is None or landmarks.right is None:
        missing = "left" if landmarks.left is None else "right"
        raise DataError(f"gaze_deviation: missing {missing} eye landmarks")
    return (_eye_deviation(landmarks.left) + _eye_deviation(landmarks.right)) / 2.0


@dataclass(frozen=True)
class RefinementResult:
    decisions: dict[Requirement, Decision]
    flipped: bool
    reason: Optional[str]
    note: Optional[str]


def refine_looking_away(
    decisions: Mapping[Requirement, Decision],
    landmarks: Optional[EyeLandmarks],
    tau: float = DEFAULT_TAU,
) -> RefinementResult:
    """Possibly flip the looking-away decision to non-compliant.

    The flip happens only when both the pose (roll/pitch/yaw) and gaze
    decisions are compliant, landmarks are available, and the measured
    deviation exceeds ``tau``. Decisions are otherwise returned
    unchanged; absent landmarks produce a diagnostic note, not an error.
    """
    if tau <= 0:
        raise DataError(f"tau must be > 0, got {tau}")
    updated = dict(decisions)
    pose_ok = decisions.get(Requirement.ROLL_PITCH_YAW) is Decision.COMPLIANT
    gaze_ok = decisions.get(Requirement.LOOKING_AWAY) is Decision.COMPLIANT
    if not (pose_ok and gaze_ok):
        return RefinementResult(updated, flipped=False, reason=None, note=None)
    if landmarks is None:
        return RefinementResult(
            updated, flipped=False, reason=None, note="no landmarks available"
        )
    deviation = gaze_deviation(landmarks)
    if deviation > tau:
        updated[Requirement.LOOKING_AWAY] = Decision.NON_COMPLIANT
        return RefinementResult(
            updated,
            flipped=True,
            reason="gaze_refinement",
            note=f"deviation {deviation:.4f} > tau {tau:.4f}",
        )
    return RefinementResult(updated, flipped=False, reason=None, note=None)


# ---------------------------------------------------------------------------
# Landmark sources
# ---------------------------------------------------------------------------


class LandmarkDetector(Protocol):
    def detect(self, image_id: str) -> Optional[EyeLandmarks]: ...


def _eye_from_dict(raw: Mapping) -> Eye:
    return Eye(
        iris_center=tuple(raw["iris"]),
        corner_inner=tuple(raw["inner"]),
        corner_outer=tuple(raw["outer"]),
    )


class SidecarLandmarks:
    """Deterministic detector stub backed by a sidecar JSON file."""

    def __init__(self, path: str | os.PathLike):
        with open(path, "r", encoding="utf-8") as fh:
            self._data = json.load(fh)

    def detect(self, image_id: str) -> Optional[EyeLandmarks]:
        raw = self._data.get(image_id)
        if raw is None:
            return None
        return EyeLandmarks(
            left=_eye_from_dict(raw["left"]) if "left" in raw else None,
            right=_eye_from_dict(raw["right"]) if "right" in raw else None,
        )


def save_landmark_sidecar(
    landmarks: Mapping[str, EyeLandmarks], path: str | os.PathLike
) -> None:
    def eye_dict(eye: Optional[Eye]):
        if eye is None:
            return None
        return {
            "iris": list(eye.iris_center),
            "inner": list(eye.corner_inner),
            "outer": list(eye.corner_outer),
        }

    payload = {}
    for image_id, lm in landmarks.items():
        entry = {}
        if lm.left is not None:
            entry["left"] = eye_dict(lm.left)
        if lm.right is not None:
            entry["right"] = eye_dict(lm.right)
        payload[image_id] = entry
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
