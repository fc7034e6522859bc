import pytest
from hypothesis import given
from hypothesis import strategies as st

from teach.bus.topics import (
    InvalidFilterError,
    InvalidTopicError,
    topic_matches,
    validate_filter,
    validate_topic,
)

# Matching table: includes the '#'-matches-parent rule and '$'-exclusion.
MATCH_CASES = [
    ("teaching/sensors/+", "teaching/sensors/eda", True),
    ("teaching/#", "teaching/lm/stress", True),
    ("teaching/+", "teaching/lm/stress", False),
    ("teaching/#", "teaching", True),
    ("#", "teaching", True),
    ("#", "a/b/c/d", True),
    ("+", "teaching", True),
    ("+", "teaching/lm", False),
    ("a/b/c", "a/b/c", True),
    ("a/b/c", "a/b", False),
    ("a/b", "a/b/c", False),
    ("a/+/c", "a/b/c", True),
    ("a/+/c", "a/x/c", True),
    ("a/+/c", "a/b/d", False),
    ("a/+/+", "a/b/c", True),
    ("a/+/+", "a/b", False),
    ("a/#", "a/b/c/d/e", True),
    ("a/#", "a", True),
    ("a/b/#", "a/b", True),
    ("a/b/#", "a/b/c", True),
    ("a/b/#", "a/c", False),
    ("+/+", "/finance", True),
    ("/+", "/finance", True),
    ("+", "/finance", False),
    ("+/#", "a", True),  # '+' takes the level, '#' matches zero children
    ("a//b", "a//b", True),
    ("a/+/b", "a//b", True),
    ("sport/tennis/player1/#", "sport/tennis/player1", True),
    ("sport/tennis/player1/#", "sport/tennis/player1/ranking", True),
    ("sport/tennis/player1/#", "sport/tennis/player1/score/wimbledon", True),
    ("sport/tennis/+", "sport/tennis/player1", True),
    ("sport/tennis/+", "sport/tennis/player1/ranking", False),
    ("#", "$SYS/broker/load", False),
    ("+/monitor/Clients", "$SYS/monitor/Clients", False),
    ("$SYS/#", "$SYS/broker/load", True),
    ("teaching/ui/#", "teaching/ui/override", True),
    ("teaching/ui/#", "teaching/lm/action", False),
]


@pytest.mark.parametrize("pattern,topic,expected", MATCH_CASES)
def test_topic_matches(pattern, topic, expected):
    assert topic_matches(pattern, topic) is expected


@pytest.mark.parametrize("pattern", [
    "a/#/b", "#/a", "a/b#", "a/#b", "a/+b/c", "a/b+/c", "", "a/b\x00c",
])
def test_invalid_filters_rejected(pattern):
    with pytest.raises(InvalidFilterError):
        validate_filter(pattern)


@pytest.mark.parametrize("topic", ["", "a/+/b", "a/#", "nul\x00here"])
def test_invalid_topics_rejected(topic):
    with pytest.raises(InvalidTopicError):
        validate_topic(topic)


topic_level = st.text(
    alphabet=st.characters(blacklist_characters="/+#\x00", min_codepoint=32, max_codepoint=0x2FF),
    min_size=0, max_size=8)
topics = st.lists(topic_level, min_size=1, max_size=6).map("/".join).filter(
    lambda t: t and not t.startswith("$"))


@given(topics)
def test_matching_reflexive_on_wildcard_free_filters(topic):
    assert topic_matches(topic, topic)


@given(topics, st.integers(0, 5))
def test_hash_suffix_matches_descendants_and_parent(topic, extra_levels):
    suffix = "/".join(["x"] * extra_levels)
    child = f"{topic}/{suffix}" if extra_levels else topic
    assert topic_matches(f"{topic}/#", child)
