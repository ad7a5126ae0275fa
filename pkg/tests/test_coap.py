"""Codec tests: byte-exact vectors, round-trip property, decoder hardening."""

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from provgate import coap
from provgate.coap import (
    CHANGED,
    CONTENT,
    GET,
    PUT,
    BadOption,
    BadVersion,
    CoapClient,
    CoapDecodeError,
    CoapMessage,
    CoapServer,
    CoapTimeout,
    CoapType,
    Code,
    InProcessTransport,
    OptionTooLong,
    PayloadMarkerWithoutPayload,
    ReservedTKL,
    TokenTooLong,
    Truncated,
    UdpCoapEndpoint,
    UdpTransport,
    decode,
    encode,
    uri_path_options,
)


class TestByteVectors:
    def test_con_get_with_uri_path(self):
        msg = CoapMessage(
            mtype=CoapType.CON,
            code=GET,
            message_id=0x1234,
            options=[(11, b"execute")],
        )
        assert encode(msg) == bytes.fromhex("40011234b765786563757465")

    def test_ack_changed_empty(self):
        msg = CoapMessage(mtype=CoapType.ACK, code=CHANGED, message_id=0)
        assert encode(msg) == bytes.fromhex("60440000")

    def test_decode_con_get_vector(self):
        msg = decode(bytes.fromhex("40011234b765786563757465"))
        assert msg.mtype is CoapType.CON
        assert msg.code == GET
        assert msg.message_id == 0x1234
        assert msg.token == b""
        assert msg.options == [(11, b"execute")]
        assert msg.payload == b""


class TestEncodeErrors:
    def test_token_too_long(self):
        with pytest.raises(TokenTooLong):
            encode(CoapMessage(CoapType.CON, GET, 1, token=b"123456789"))

    def test_option_value_too_long(self):
        with pytest.raises(OptionTooLong):
            encode(CoapMessage(CoapType.CON, GET, 1, options=[(11, b"x" * 256)]))

    def test_option_delta_beyond_one_byte_extension(self):
        with pytest.raises(OptionTooLong):
            encode(CoapMessage(CoapType.CON, GET, 1, options=[(300, b"x")]))


class TestDecodeErrors:
    def test_truncated_header(self):
        with pytest.raises(Truncated):
            decode(b"\x40\x01\x12")

    def test_bad_version(self):
        with pytest.raises(BadVersion):
            decode(bytes([0x80, 0x01, 0x00, 0x01]))

    def test_reserved_tkl(self):
        with pytest.raises(ReservedTKL):
            decode(bytes([0x49, 0x01, 0x00, 0x01]))

    def test_payload_marker_without_payload(self):
        with pytest.raises(PayloadMarkerWithoutPayload):
            decode(bytes([0x40, 0x01, 0x00, 0x01, 0xFF]))

    def test_token_truncated(self):
        with pytest.raises(Truncated):
            decode(bytes([0x42, 0x01, 0x00, 0x01, 0xAA]))

    def test_two_byte_extension_rejected(self):
        with pytest.raises(BadOption):
            decode(bytes([0x40, 0x01, 0x00, 0x01, 0xE1, 0x00, 0x00, 0xAA]))


OPTION_NUMBERS = [1, 3, 7, 11, 11, 12, 15, 35, 60, 268]

messages = st.builds(
    CoapMessage,
    mtype=st.sampled_from(list(CoapType)),
    code=st.builds(Code, clazz=st.integers(0, 7), detail=st.integers(0, 31)),
    message_id=st.integers(0, 0xFFFF),
    token=st.binary(max_size=8),
    options=st.lists(
        st.tuples(st.sampled_from(OPTION_NUMBERS), st.binary(max_size=40)), max_size=6
    ),
    payload=st.binary(max_size=120),
)


class TestRoundTrip:
    @settings(max_examples=400, deadline=None)
    @given(messages)
    def test_decode_inverts_encode(self, msg):
        assert decode(encode(msg)) == msg

    def test_options_sorted_on_construction(self):
        msg = CoapMessage(CoapType.CON, GET, 1, options=[(12, b"a"), (11, b"b")])
        assert [n for n, _ in msg.options] == [11, 12]

    def test_fuzz_decoder_never_crashes(self):
        rng = random.Random(0xC0AB)
        survived = 0
        for _ in range(5000):
            data = rng.randbytes(rng.randint(0, 64))
            try:
                decode(data)
            except CoapDecodeError:
                pass
            survived += 1
        assert survived == 5000


def device_router(request):
    path = request.uri_path()
    if path == ["device", "sensor-1"]:
        return CONTENT, b"25.0 C"
    return coap.NOT_FOUND, b""


class TestTransports:
    def test_in_process_request_response(self):
        transport = InProcessTransport()
        transport.bind(CoapServer(device_router).handle_datagram)
        client = CoapClient(transport, ack_timeout_s=0.01)
        reply = client.request(GET, ["device", "sensor-1"])
        assert reply.code == CONTENT
        assert reply.payload == b"25.0 C"

    def test_retransmission_then_success(self):
        transport = InProcessTransport()
        transport.bind(CoapServer(device_router).handle_datagram)
        transport.drop_next = 2
        client = CoapClient(transport, ack_timeout_s=0.001)
        reply = client.request(GET, ["device", "sensor-1"])
        assert reply.code == CONTENT

    def test_timeout_after_max_retransmits(self):
        transport = InProcessTransport()
        transport.bind(CoapServer(device_router).handle_datagram)
        transport.drop_next = 10
        client = CoapClient(transport, ack_timeout_s=0.001, max_retransmit=2)
        with pytest.raises(CoapTimeout):
            client.request(GET, ["device", "sensor-1"])

    def test_malformed_datagram_gets_rst(self):
        server = CoapServer(device_router)
        reply = server.handle_datagram(bytes([0x80, 0x01, 0x00, 0x07]))
        msg = decode(reply)
        assert msg.mtype is CoapType.RST
        assert msg.message_id == 7

    def test_udp_loopback(self):
        endpoint = UdpCoapEndpoint(CoapServer(device_router))
        endpoint.start()
        try:
            transport = UdpTransport(endpoint.host, endpoint.port)
            client = CoapClient(transport, ack_timeout_s=1.0)
            reply = client.request(GET, ["device", "sensor-1"])
            assert reply.payload == b"25.0 C"
            transport.close()
        finally:
            endpoint.stop()
