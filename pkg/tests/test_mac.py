import pytest
from hypothesis import given
from hypothesis import strategies as st

from mac import (
    BROADCAST,
    Backoff,
    CsmaState,
    Drop,
    Frame,
    FrameKind,
    Mac,
    MacConfig,
    MacState,
    MacVariant,
    RetransmitAt,
    Transmit,
    csma_attempt,
    next_slot_boundary,
    on_ack_timeout,
    on_rx_data,
    tx_start_time,
)
from sim_core import EventKind, RngStream, Simulator

BIT = 1e-6


class FakePhy:
    """Records transmissions; the radio is busy for bits x 1 us."""

    def __init__(self, sim, busy=False):
        self.sim = sim
        self.transmitting = False
        self.sent = []
        self.tx_end = 0.0
        self.busy = busy

    def transmit(self, frame):
        self.transmitting = True
        self.sent.append((self.sim.now, frame))
        self.tx_end = self.sim.now + self.airtime(frame.bits)
        self.sim.post(self.tx_end, EventKind.PHY_TX_END, 1, frame)
        return self.tx_end

    def channel_busy(self):
        return self.busy

    def airtime(self, bits):
        return bits * BIT

    def busy_until(self):
        return max(self.tx_end, self.sim.now)


def harness(variant=MacVariant.UNSLOTTED, busy=False, **overrides):
    sim = Simulator(seed=1)
    phy = FakePhy(sim, busy)
    config = MacConfig(variant=variant, **overrides).with_defaults(600 * BIT, 64 * BIT, 1e-6)
    delivered, failed = [], []
    mac = Mac(1, config, sim, phy, delivered.append, lambda frame, reason: failed.append(reason))
    for kind in (EventKind.PHY_TX_START, EventKind.SLOT_BOUNDARY, EventKind.MAC_TIMEOUT, EventKind.CSMA_BACKOFF):
        sim.on(kind, lambda event: mac.on_timer(event.kind, event.payload))
    sim.on(EventKind.MAC_ACK, lambda event: mac.transmit_ack(event.payload))
    sim.on(EventKind.PHY_RX_END, lambda event: mac.on_receive(event.payload))

    def tx_end(event):
        phy.transmitting = False
        mac.on_tx_end(event.payload)

    sim.on(EventKind.PHY_TX_END, tx_end)
    return sim, phy, mac, delivered, failed


def data_frame(mac, dst=2, bits=512, frame_id=1):
    return Frame(frame_id, FrameKind.DATA, mac.node_id, dst, mac.next_seq(), bits)


# Pure decisions ----------------------------------------------------------------------------------


def test_next_slot_boundary_examples():
    assert next_slot_boundary(0.0, 1e-3) == 0.0
    assert next_slot_boundary(0.0005, 1e-3) == pytest.approx(1e-3)
    assert next_slot_boundary(2e-3, 1e-3) == pytest.approx(2e-3)
    assert next_slot_boundary(0.0015, 1e-3, origin=0.0005) == pytest.approx(0.0015)


@given(
    st.floats(min_value=0.0, max_value=1e3, allow_nan=False),
    st.floats(min_value=1e-6, max_value=1.0, allow_nan=False),
)
def test_next_slot_boundary_is_first_front_not_before(t, slot):
    boundary = next_slot_boundary(t, slot)
    assert boundary >= t
    assert boundary - t <= slot + 1e-9
    k = round(boundary * 1e12) / round(slot * 1e12)
    assert k == pytest.approx(round(k), abs=1e-6)


def test_tx_start_time_per_variant():
    unslotted = MacConfig().with_defaults(600 * BIT, 64 * BIT, 1e-6)
    assert tx_start_time(unslotted, 0.25) == 0.25
    slotted = MacConfig(variant=MacVariant.SLOTTED).with_defaults(600 * BIT, 64 * BIT, 1e-6)
    start = tx_start_time(slotted, 0.25)
    assert start >= 0.25
    assert start == pytest.approx(next_slot_boundary(0.25, slotted.slot_duration))
    csma = MacConfig(variant=MacVariant.CSMA_CA, max_retx=0).with_defaults(600 * BIT, 64 * BIT, 0.0)
    stream = RngStream(1, 1, "mac-backoff")
    for _ in range(50):
        start = tx_start_time(csma, 1.0, stream)
        fixed = csma.cca_duration + csma.turnaround
        assert 1.0 + fixed - 1e-12 <= start <= 1.0 + 7 * csma.unit_backoff + fixed + 1e-12
    with pytest.raises(ValueError):
        tx_start_time(unslotted, -1.0)


def test_derived_timings():
    config = MacConfig().with_defaults(576e-6, 64e-6, 1e-6)
    assert config.ack_timeout == pytest.approx(2 * (1e-6 + 64e-6))
    assert config.slot_duration == pytest.approx(576e-6 + 64e-6 + 1e-6)


def test_slot_shorter_than_frame_rejected():
    with pytest.raises(ValueError):
        MacConfig(variant=MacVariant.SLOTTED, slot_duration=100e-6).with_defaults(576e-6, 64e-6, 1e-6)


@pytest.mark.parametrize("retx", [-1, 7])
def test_retx_range(retx):
    with pytest.raises(ValueError):
        MacConfig(max_retx=retx)


def test_ack_timeout_retransmits_within_window_then_drops():
    config = MacConfig(max_retx=2, backoff_window=8).with_defaults(600 * BIT, 64 * BIT, 1e-6)
    stream = RngStream(2, 1, "mac-backoff")
    airtime = 576 * BIT
    for attempts in (1, 2):
        for _ in range(100):
            decision = on_ack_timeout(MacState(attempts=attempts), config, stream, 1.0, airtime)
            assert isinstance(decision, RetransmitAt)
            units = (decision.time - 1.0) / airtime
            assert 1 - 1e-9 <= units <= 8 + 1e-9
            assert units == pytest.approx(round(units))
    assert on_ack_timeout(MacState(attempts=3), config, stream, 1.0, airtime) == Drop("retry-limit")


def test_slotted_retransmission_lands_on_a_front():
    config = MacConfig(variant=MacVariant.SLOTTED).with_defaults(600 * BIT, 64 * BIT, 1e-6)
    decision = on_ack_timeout(MacState(attempts=1), config, RngStream(2, 1, "mac-backoff"), 0.0123, 576 * BIT)
    assert decision.time > 0.0123
    assert decision.time == pytest.approx(next_slot_boundary(decision.time, config.slot_duration))


def test_csma_idle_channel_transmits_after_cca_and_turnaround():
    config = MacConfig(variant=MacVariant.CSMA_CA)
    outcome = csma_attempt(CsmaState(3), config, False, 2.0, RngStream(1, 1, "mac-backoff"))
    assert outcome == Transmit(2.0 + 0.128e-3 + 0.192e-3)


def test_csma_busy_channel_backs_off_then_fails():
    config = MacConfig(variant=MacVariant.CSMA_CA)
    state = CsmaState(3)
    stream = RngStream(1, 1, "mac-backoff")
    for expected_be in (4, 5, 5, 5):
        outcome = csma_attempt(state, config, True, 0.0, stream)
        assert isinstance(outcome, Backoff)
        assert state.be == expected_be
        assert outcome.until <= config.cca_duration + (2**expected_be - 1) * config.unit_backoff + 1e-12
    assert csma_attempt(state, config, True, 0.0, stream) == Drop("channel-access-failure")
    assert state.nb == 5


# Driver ------------------------------------------------------------------------------------------


def test_unacknowledged_frame_is_retried_then_dropped():
    sim, phy, mac, _, failed = harness(max_retx=2)
    mac.enqueue(data_frame(mac))
    sim.run_until(1.0)
    assert len(phy.sent) == 3
    assert failed == ["retry-limit"]
    counters = sim.metrics.counters
    assert counters["ack-timeouts"] == 3
    assert counters["retransmissions"] == 2
    assert counters["mac-failures"] == 1
    assert mac.state.current is None


def test_no_retransmission_with_zero_retx():
    sim, phy, mac, _, failed = harness(max_retx=0)
    mac.enqueue(data_frame(mac))
    sim.run_until(1.0)
    assert len(phy.sent) == 1
    assert failed == ["retry-limit"]


def test_ack_completes_frame_and_serves_queue():
    sim, phy, mac, _, failed = harness()
    first = data_frame(mac, frame_id=1)
    second = data_frame(mac, frame_id=2)
    mac.enqueue(first)
    mac.enqueue(second)
    sim.run_until(first.bits * BIT)
    assert mac.state.pending_ack == first.seq
    mac.on_receive(Frame(-1, FrameKind.ACK, 2, 1, first.seq, 64))
    assert mac.state.current is second
    sim.run_until(first.bits * BIT + 1e-6)
    sim.run_until(2 * first.bits * BIT + 1e-6)
    assert [f for _, f in phy.sent] == [first, second]
    assert sim.metrics.counters["retransmissions"] == 0
    assert not failed


def test_ack_for_other_sequence_is_ignored():
    sim, phy, mac, _, _ = harness()
    frame = data_frame(mac)
    mac.enqueue(frame)
    sim.run_until(frame.bits * BIT)
    mac.on_receive(Frame(-1, FrameKind.ACK, 2, 1, frame.seq + 1, 64))
    assert mac.state.current is frame


def test_broadcast_needs_no_ack():
    sim, phy, mac, _, failed = harness()
    mac.enqueue(data_frame(mac, dst=BROADCAST))
    sim.run_until(1.0)
    assert len(phy.sent) == 1
    assert sim.metrics.counters["ack-timeouts"] == 0
    assert not failed


def test_queue_limit_drops_tail():
    sim, phy, mac, _, failed = harness(queue_limit=2)
    for i in range(4):
        mac.enqueue(data_frame(mac, frame_id=i))
    # one in service, two queued, one dropped
    assert sim.metrics.counters["queue-drops"] == 1
    assert failed == ["queue-full"]


def test_slotted_transmissions_start_on_fronts():
    sim, phy, mac, _, _ = harness(variant=MacVariant.SLOTTED, max_retx=3)
    sim.post(0.0123, EventKind.APP_GENERATE, 1)
    sim.on(EventKind.APP_GENERATE, lambda event: mac.enqueue(data_frame(mac)))
    sim.run_until(1.0)
    slot = mac.config.slot_duration
    assert len(phy.sent) == 4
    for t, _ in phy.sent:
        assert t == pytest.approx(next_slot_boundary(t, slot))


def test_slotted_acks_wait_for_the_next_front():
    sim, phy, mac, delivered, _ = harness(variant=MacVariant.SLOTTED, max_retx=3)
    slot = mac.config.slot_duration
    sim.on(EventKind.APP_GENERATE, lambda event: mac.enqueue(data_frame(mac)))
    sim.post(0.0123, EventKind.APP_GENERATE, 1)
    received_at = [0.5031, 0.6107, 0.7183]
    for i, t in enumerate(received_at):
        sim.post(t, EventKind.PHY_RX_END, 1, Frame(20 + i, FrameKind.DATA, 2, 1, i + 1, 512))
    sim.run_until(1.0)

    acks = [t for t, f in phy.sent if f.kind is FrameKind.ACK]
    assert len(acks) == 3 and len(delivered) == 3
    assert acks == pytest.approx([next_slot_boundary(t, slot) for t in received_at])
    # every frame, data or ACK, starts on a front
    assert len(phy.sent) == 4 + 3
    for t, _ in phy.sent:
        assert t == pytest.approx(next_slot_boundary(t, slot))


def test_slotted_ack_timer_covers_the_ack_slot():
    sim, phy, mac, _, failed = harness(variant=MacVariant.SLOTTED)
    slot = mac.config.slot_duration
    frame = data_frame(mac)
    mac.enqueue(frame)
    ack = Frame(-1, FrameKind.ACK, 2, 1, frame.seq, 64)
    # the peer's ACK goes out on the next front and takes 64 us
    sim.post(slot + 64 * BIT + 1e-7, EventKind.PHY_RX_END, 1, ack)
    sim.run_until(1.0)
    assert len(phy.sent) == 1
    assert sim.metrics.counters["ack-timeouts"] == 0
    assert mac.state.current is None
    assert not failed


def test_ack_skipped_while_radio_busy():
    sim, phy, mac, _, _ = harness(variant=MacVariant.SLOTTED)
    phy.transmitting = True
    mac.transmit_ack(Frame(-3, FrameKind.ACK, 1, 2, 1, 64))
    assert phy.sent == []
    assert sim.metrics.counters["acks-skipped"] == 1


def test_duplicate_record_is_one_entry_per_sender():
    sim, phy, mac, delivered, _ = harness()
    for seq in range(1, 200):
        phy.transmitting = False
        on_rx_data(mac, Frame(seq, FrameKind.DATA, 2 + seq % 3, 1, seq, 64))
    phy.transmitting = False
    assert not on_rx_data(mac, Frame(500, FrameKind.DATA, 2, 1, 198, 64))
    assert len(delivered) == 199
    assert mac.last_seq == {2: 198, 3: 199, 4: 197}


def test_csma_channel_access_failure():
    sim, phy, mac, _, failed = harness(variant=MacVariant.CSMA_CA, busy=True, max_retx=0)
    mac.enqueue(data_frame(mac))
    sim.run_until(1.0)
    assert phy.sent == []
    assert failed == ["channel-access-failure"]
    assert sim.metrics.counters["channel-access-failures"] == 1


def test_csma_idle_channel_sends_once_without_ack():
    sim, phy, mac, _, failed = harness(variant=MacVariant.CSMA_CA, max_retx=0)
    mac.enqueue(data_frame(mac))
    sim.run_until(1.0)
    assert len(phy.sent) == 1
    assert sim.metrics.counters["ack-timeouts"] == 0
    assert not failed


def test_received_data_is_acked_and_deduplicated():
    sim, phy, mac, delivered, _ = harness()
    incoming = Frame(9, FrameKind.DATA, 2, 1, 5, 512, payload="hello")
    assert on_rx_data(mac, incoming)
    phy.transmitting = False
    assert not on_rx_data(mac, incoming)
    assert delivered == [incoming]
    acks = [f for _, f in phy.sent if f.kind is FrameKind.ACK]
    assert len(acks) == 2
    assert acks[0].dst == 2 and acks[0].seq == 5
    assert sim.metrics.counters["duplicates"] == 1


def test_frames_for_other_nodes_are_ignored():
    sim, phy, mac, delivered, _ = harness()
    mac.on_receive(Frame(9, FrameKind.DATA, 2, 3, 5, 512))
    assert delivered == []
    assert phy.sent == []
