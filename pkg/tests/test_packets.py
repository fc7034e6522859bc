import pytest
from hypothesis import given
from hypothesis import strategies as st

from teach.bus import packets as pk

# -- hand-pinned wire bytes -------------------------------------------------

def test_pingreq_wire_bytes():
    assert pk.encode_packet(pk.Pingreq()) == b"\xc0\x00"


def test_pingresp_disconnect_wire_bytes():
    assert pk.encode_packet(pk.Pingresp()) == b"\xd0\x00"
    assert pk.encode_packet(pk.Disconnect()) == b"\xe0\x00"


def test_publish_qos1_round_trip_identity():
    p = pk.Publish(topic="a/b", qos=1, packet_id=7, payload=b"x")
    assert pk.decode_packet(pk.encode_packet(p)) == p


def test_reserved_type_15_rejected():
    with pytest.raises(pk.UnsupportedPacketError):
        pk.decode_packet(b"\xf0\x00")


def test_reserved_type_0_rejected():
    with pytest.raises(pk.CodecError):
        pk.decode_packet(b"\x00\x00")


@pytest.mark.parametrize("ptype", [5, 6, 7])
def test_qos2_handshake_types_rejected(ptype):
    with pytest.raises(pk.UnsupportedPacketError):
        pk.decode_packet(bytes([ptype << 4 | (0x02 if ptype == 6 else 0), 0]))


def test_connect_wire_layout():
    raw = pk.encode_packet(pk.Connect(client_id="c1", keepalive=30))
    # fixed header, "MQTT", level 4, clean-session flags, keepalive, client id
    assert raw == bytes([0x10, 14]) + b"\x00\x04MQTT\x04\x02\x00\x1e\x00\x02c1"
    assert pk.decode_packet(raw) == pk.Connect(client_id="c1", keepalive=30)


def test_connect_with_will_rejected():
    raw = bytearray(pk.encode_packet(pk.Connect(client_id="c1")))
    raw[9] |= 0x04  # set will flag
    with pytest.raises(pk.UnsupportedPacketError):
        pk.decode_packet(bytes(raw))


def test_truncated_buffer_detected():
    raw = pk.encode_packet(pk.Publish(topic="a/b", payload=b"hello"))
    with pytest.raises(pk.TruncatedPacketError):
        pk.decode_packet(raw[:-2])


def test_trailing_bytes_detected():
    raw = pk.encode_packet(pk.Pingreq()) + b"zz"
    with pytest.raises(pk.MalformedPacketError):
        pk.decode_packet(raw)


def test_malformed_remaining_length():
    with pytest.raises(pk.MalformedPacketError):
        pk.decode_packet(b"\xc0\x80\x80\x80\x80\x01")


def test_remaining_length_codec():
    for value, expected in [(0, b"\x00"), (127, b"\x7f"), (128, b"\x80\x01"),
                            (16383, b"\xff\x7f"), (16384, b"\x80\x80\x01"),
                            (268435455, b"\xff\xff\xff\x7f")]:
        assert pk.encode_remaining_length(value) == expected
        decoded, offset = pk.decode_remaining_length(expected, 0)
        assert (decoded, offset) == (value, len(expected))


def test_dup_on_qos0_rejected():
    # 0x38 = PUBLISH with DUP set, QoS 0
    body = b"\x00\x03a/b" + b"x"
    raw = bytes([0x38, len(body)]) + body
    with pytest.raises(pk.MalformedPacketError):
        pk.decode_packet(raw)


def test_subscribe_flags_enforced():
    good = pk.encode_packet(pk.Subscribe(packet_id=1, topics=[("a/#", 1)]))
    assert good[0] == 0x82
    bad = bytes([0x80]) + good[1:]
    with pytest.raises(pk.MalformedPacketError):
        pk.decode_packet(bad)


def test_wildcard_topic_in_publish_rejected():
    body = b"\x00\x03a/+" + b"x"
    raw = bytes([0x30, len(body)]) + body
    with pytest.raises(pk.MalformedPacketError):
        pk.decode_packet(raw)


# -- randomized round-trip property ----------------------------------------

topic_names = st.lists(
    st.text(alphabet=st.characters(blacklist_characters="/+#\x00",
                                   min_codepoint=32, max_codepoint=0x2FF),
            min_size=0, max_size=6),
    min_size=1, max_size=4).map("/".join).filter(bool)

filters = st.one_of(
    topic_names,
    topic_names.map(lambda t: t + "/#"),
    topic_names.map(lambda t: "+/" + t),
    st.just("#"),
)

packet_ids = st.integers(1, 65535)

connects = st.builds(pk.Connect,
                     client_id=st.text(st.characters(min_codepoint=32, max_codepoint=126),
                                       max_size=23),
                     keepalive=st.integers(0, 65535),
                     clean_session=st.booleans())
connacks = st.builds(pk.Connack, session_present=st.booleans(),
                     return_code=st.integers(0, 5))
publishes = st.one_of(
    st.builds(pk.Publish, topic=topic_names, payload=st.binary(max_size=64),
              qos=st.just(0), packet_id=st.none(), dup=st.just(False),
              retain=st.booleans()),
    st.builds(pk.Publish, topic=topic_names, payload=st.binary(max_size=64),
              qos=st.just(1), packet_id=packet_ids, dup=st.booleans(),
              retain=st.booleans()),
)
pubacks = st.builds(pk.Puback, packet_id=packet_ids)
subscribes = st.builds(pk.Subscribe, packet_id=packet_ids,
                       topics=st.lists(st.tuples(filters, st.integers(0, 2)),
                                       min_size=1, max_size=4))
subacks = st.builds(pk.Suback, packet_id=packet_ids,
                    return_codes=st.lists(st.sampled_from([0, 1, 2, 0x80]),
                                          min_size=1, max_size=4))
unsubscribes = st.builds(pk.Unsubscribe, packet_id=packet_ids,
                         topics=st.lists(filters, min_size=1, max_size=4))
unsubacks = st.builds(pk.Unsuback, packet_id=packet_ids)
empties = st.sampled_from([pk.Pingreq(), pk.Pingresp(), pk.Disconnect()])

any_packet = st.one_of(connects, connacks, publishes, pubacks, subscribes,
                       subacks, unsubscribes, unsubacks, empties)


@given(any_packet)
def test_round_trip_random_packets(packet):
    assert pk.decode_packet(pk.encode_packet(packet)) == packet


@given(any_packet)
def test_streamed_decode_matches_buffer_decode(packet):
    raw = pk.encode_packet(packet)
    pos = [0]

    def recv_exact(n):
        chunk = raw[pos[0]:pos[0] + n]
        assert len(chunk) == n
        pos[0] += n
        return chunk

    assert pk.read_packet(recv_exact) == packet
    assert pos[0] == len(raw)
