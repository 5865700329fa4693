"""Stock tool shapes in their grasp frame (grasp point at the origin, meters)."""

STICK = ((0.0, 0.0), (0.30, 0.0))
HOOK = ((0.0, 0.0), (0.25, 0.0), (0.25, 0.06))
# Polylines cannot branch: the Y-hook is its two-pronged head; the stem from
# the grasp point to the fork is rigid and never touches the object.
Y_HOOK = ((0.28, 0.06), (0.22, 0.0), (0.28, -0.06))

STOCK = {"stick": STICK, "hook": HOOK, "yhook": Y_HOOK}

# tool kind -> can it drag an object out of a confined area
HOOK_CLASS = {"stick": False, "hook": True, "yhook": False}
