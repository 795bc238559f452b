"""Per-criterion detail strings, filled by the acceptance tests."""

DETAILS: dict[int, str] = {}
