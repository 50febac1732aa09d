"""Refine frontal-gaze decisions from eye landmarks.

The classifier's looking-away decision can be tightened with a cheap
geometric test: the iris offset from the eye center, projected on the
corner axis and normalized by the eye width. The refinement only fires
when pose and gaze are both already deemed compliant, and it never flips
a decision back toward compliant.
"""
from portraitcheck.gaze import Eye, EyeLandmarks, gaze_deviation, refine_looking_away
from portraitcheck.types import Decision, Requirement


def eyes(offset: float) -> EyeLandmarks:
    """Both eyes 10px wide, iris displaced `offset` of the eye width."""
    def eye(cx):
        return Eye(
            iris_center=(cx + 10 * offset, 0.0),
            corner_inner=(cx - 5.0, 0.0),
            corner_outer=(cx + 5.0, 0.0),
        )

    return EyeLandmarks(left=eye(0.0), right=eye(30.0))


print("normalized deviation for increasing iris offsets:")
for offset in (0.0, 0.1, 0.2, 0.3, 0.45):
    print(f"  offset {offset:.2f} -> deviation {gaze_deviation(eyes(offset)):.3f}")

decisions = {
    Requirement.ROLL_PITCH_YAW: Decision.COMPLIANT,
    Requirement.LOOKING_AWAY: Decision.COMPLIANT,
}

print("\nrefinement at tau = 0.15:")
for offset in (0.05, 0.25):
    result = refine_looking_away(decisions, eyes(offset), tau=0.15)
    outcome = result.decisions[Requirement.LOOKING_AWAY].value
    print(f"  iris offset {offset:.2f}: looking_away -> {outcome}"
          + (f"  (reason: {result.reason})" if result.flipped else ""))

# pose non-compliant: the metric is not even consulted
blocked = refine_looking_away(
    {**decisions, Requirement.ROLL_PITCH_YAW: Decision.NON_COMPLIANT},
    eyes(0.4),
    tau=0.15,
)
print("  non-frontal pose, huge offset: looking_away ->",
      blocked.decisions[Requirement.LOOKING_AWAY].value, "(refinement skipped)")

# no landmarks: unchanged, with a note
missing = refine_looking_away(decisions, None, tau=0.15)
print(f"  no landmarks: unchanged ({missing.note})")
