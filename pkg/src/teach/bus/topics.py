"""Topic name/filter validation and MQTT 3.1.1 wildcard matching."""

__all__ = [
    "InvalidFilterError",
    "InvalidTopicError",
    "topic_matches",
    "validate_filter",
    "validate_topic",
]

MAX_TOPIC_BYTES = 65535


class InvalidTopicError(ValueError):
    """Topic name is empty, oversized, or contains wildcards/NUL."""


class InvalidFilterError(ValueError):
    """Topic filter violates the `+`/`#` placement rules."""


def validate_topic(topic: str) -> None:
    if not topic:
        raise InvalidTopicError("topic must be non-empty")
    # UTF-8 is at most 4 bytes per code point: only encode near the limit
    if len(topic) * 4 > MAX_TOPIC_BYTES and len(topic.encode("utf-8")) > MAX_TOPIC_BYTES:
        raise InvalidTopicError("topic exceeds 65535 bytes")
    if "\x00" in topic:
        raise InvalidTopicError("topic contains NUL")
    if "+" in topic or "#" in topic:
        raise InvalidTopicError(f"topic contains wildcard characters: {topic!r}")


def validate_filter(pattern: str) -> None:
    if not pattern:
        raise InvalidFilterError("filter must be non-empty")
    if len(pattern) * 4 > MAX_TOPIC_BYTES and len(pattern.encode("utf-8")) > MAX_TOPIC_BYTES:
        raise InvalidFilterError("filter exceeds 65535 bytes")
    if "\x00" in pattern:
        raise InvalidFilterError("filter contains NUL")
    levels = pattern.split("/")
    for i, level in enumerate(levels):
        if "#" in level:
            if level != "#":
                raise InvalidFilterError(f"'#' must occupy a whole level: {pattern!r}")
            if i != len(levels) - 1:
                raise InvalidFilterError(f"'#' only allowed as the final level: {pattern!r}")
        elif "+" in level and level != "+":
            raise InvalidFilterError(f"'+' must occupy a whole level: {pattern!r}")


def match_levels(flevels: list[str], tlevels: list[str]) -> bool:
    """Pre-split matching core (no validation): the broker's routing path."""
    if tlevels[0].startswith("$") and flevels[0] in ("+", "#"):
        return False
    for i, flevel in enumerate(flevels):
        if flevel == "#":
            return True
        if i >= len(tlevels):
            return False
        if flevel == "+":
            continue
        if flevel != tlevels[i]:
            return False
    return len(tlevels) == len(flevels)


def topic_matches(pattern: str, topic: str) -> bool:
    """True iff `topic` matches `pattern` under MQTT 3.1.1 semantics.

    `+` matches exactly one level, `#` matches any number of trailing levels
    including none (so "a/#" matches "a"). Filters starting with a wildcard
    never match "$"-prefixed topics.
    """
    validate_filter(pattern)
    validate_topic(topic)
    return match_levels(pattern.split("/"), topic.split("/"))
