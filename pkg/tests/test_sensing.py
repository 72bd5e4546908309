import numpy as np
import pytest

from sensing import (
    Outcome,
    SensingField,
    SensingParams,
    intruder_beacon,
    sense_decision,
    sense_level,
)
from sim_core import EventKind, NodeState, RngStream, Role, Simulator

Z = 0.45


def field_sim(params, sensors, intruders, area=None, t_end=40.0):
    """sensors/intruders: {id: NodeState kwargs}. Returns (sim, field, detections)."""
    sim = Simulator(seed=11)
    for node_id, position in sensors.items():
        sim.add_node(NodeState(node_id, position, Role.SENSOR))
    for node_id, kwargs in intruders.items():
        sim.add_node(NodeState(node_id, role=kwargs.pop("role", Role.INTRUDER_UNAUTHORIZED), **kwargs))
    detections = []
    field = SensingField(sim, params, list(sensors), list(intruders), detections.append, area)
    sim.on(EventKind.SENSOR_BEACON, lambda event: field.on_event(event.payload))
    field.start(t_end)
    sim.run_until(t_end + params.period)
    return sim, field, detections


def test_beacons_follow_the_sampling_period():
    node = NodeState(9, (0.0, 0.0, Z), Role.INTRUDER_AUTHORIZED)
    params = SensingParams(sampling_rate=0.5)
    times = intruder_beacon(node, params, RngStream(1, 9, "sensing"), 20.0)
    assert 0.0 <= times[0] < 2.0
    assert np.allclose(np.diff(times), 2.0)
    assert times[-1] < 20.0
    assert len(times) == 10


def test_beacons_outside_the_field_are_skipped():
    node = NodeState(9, (-50.0, 10.0, Z), Role.INTRUDER_UNAUTHORIZED, path=((150.0, 10.0),), speed=10.0)
    params = SensingParams(sampling_rate=1.0)
    times = intruder_beacon(node, params, RngStream(1, 9, "sensing"), 20.0, area=(100.0, 100.0))
    assert times.size > 0
    assert all(5.0 <= t <= 15.0 for t in times)


def test_only_intruders_emit():
    with pytest.raises(ValueError):
        intruder_beacon(NodeState(1, (0.0, 0.0, Z), Role.SENSOR), SensingParams(), RngStream(1, 1, "sensing"), 10.0)


def test_sense_level_two_ray_without_fading():
    params = SensingParams(fading=False)
    level = sense_level((0.0, 0.0, Z), (20.0, 0.0, Z), params)
    assert level == pytest.approx(-70.91, abs=0.01)
    # closer is louder
    assert sense_level((0.0, 0.0, Z), (5.0, 0.0, Z), params) > level


def test_rice_fading_spreads_levels_around_the_mean():
    params = SensingParams(fading=True, k_factor=4.0)
    stream = RngStream(1, 2, "sensing")
    levels = np.array([sense_level((0.0, 0.0, Z), (15.0, 0.0, Z), params, stream) for _ in range(5000)])
    plain = sense_level((0.0, 0.0, Z), (15.0, 0.0, Z), SensingParams(fading=False))
    assert levels.std() > 1.0
    # unit mean power
    assert np.mean(10 ** (levels / 10)) == pytest.approx(10 ** (plain / 10), rel=0.05)


def test_decision_bands():
    params = SensingParams(reliability=1.0, mid_band_probability=0.0)
    stream = RngStream(1, 1, "sensing")
    assert sense_decision(-95.0, params, 1, stream) is Outcome.MISSED_BELOW_SENSITIVITY
    assert sense_decision(-70.0, params, 1, stream) is Outcome.DETECTED
    assert sense_decision(-80.0, params, 1, stream) is Outcome.MISSED_PROBABILISTIC
    assert sense_decision(-60.0, params, 2, stream) is Outcome.MISSED_COLLISION


def test_mid_band_is_a_coin_flip():
    params = SensingParams()
    stream = RngStream(4, 1, "sensing")
    outcomes = [sense_decision(-80.0, params, 1, stream) for _ in range(4000)]
    share = sum(o is Outcome.DETECTED for o in outcomes) / len(outcomes)
    assert share == pytest.approx(0.5, abs=0.03)


def test_params_validation():
    with pytest.raises(ValueError):
        SensingParams(sensitivity_threshold=-70.0, detection_threshold=-75.0)
    with pytest.raises(ValueError):
        SensingParams(reliability=1.5)
    with pytest.raises(ValueError):
        SensingParams(sampling_rate=0.0)


def test_single_intruder_in_range_is_always_detected():
    params = SensingParams(fading=False, reliability=1.0)
    sim, field, detections = field_sim(
        params, {1: (10.0, 0.0, Z), 2: (80.0, 0.0, Z)}, {9: {"position": (0.0, 0.0, Z)}}, t_end=20.0
    )
    assert sim.metrics.beacons_emitted == 10
    assert sim.metrics.beacons_in_range == 10
    # the far sensor never hears it
    assert {e.sensor for e in field.events} == {1}
    assert len(detections) == 10
    assert all(e.outcome is Outcome.DETECTED for e in field.events)
    assert sim.metrics.sensing_outcomes["detected"] == 10


def test_two_intruders_collide_at_a_shared_sensor():
    params = SensingParams(fading=False, reliability=1.0)
    sim, field, detections = field_sim(
        params,
        {1: (10.0, 0.0, Z)},
        {8: {"position": (0.0, 0.0, Z)}, 9: {"position": (20.0, 0.0, Z)}},
        t_end=40.0,
    )
    collisions = sim.metrics.sensing_outcomes["missed-collision"]
    assert len(field.events) == 40
    # only the first and last beacons can fall outside the other intruder's window
    assert collisions >= 36
    assert len(detections) == 40 - collisions


def test_detection_is_reported_half_a_period_later():
    params = SensingParams(fading=False, reliability=1.0, sampling_rate=1.0)
    sim = Simulator(seed=2)
    sim.add_node(NodeState(1, (10.0, 0.0, Z), Role.SENSOR))
    sim.add_node(NodeState(9, (0.0, 0.0, Z), Role.INTRUDER_AUTHORIZED))
    seen = []
    field = SensingField(sim, params, [1], [9], lambda event: seen.append((sim.now, event.emitted_at)))
    sim.on(EventKind.SENSOR_BEACON, lambda event: field.on_event(event.payload))
    field.start(5.0)
    sim.run_until(6.0)
    assert seen
    for decided, emitted in seen:
        assert decided == pytest.approx(emitted + 0.5)


def test_inaudible_beacon_does_not_collide():
    params = SensingParams(fading=False, reliability=1.0, sensing_range=200.0)
    # intruder 9 is in range but 150 m away, far below the sensitivity
    sim, field, detections = field_sim(
        params,
        {1: (10.0, 0.0, Z)},
        {8: {"position": (0.0, 0.0, Z)}, 9: {"position": (160.0, 0.0, Z)}},
        t_end=40.0,
    )
    outcomes = sim.metrics.sensing_outcomes
    assert outcomes["missed-collision"] == 0
    assert outcomes["missed-below-sensitivity"] == 20
    assert len(detections) == 20


def test_event_history_is_bounded():
    params = SensingParams(fading=False, reliability=1.0)
    sim = Simulator(seed=11)
    sim.add_node(NodeState(1, (10.0, 0.0, Z), Role.SENSOR))
    sim.add_node(NodeState(9, (0.0, 0.0, Z), Role.INTRUDER_UNAUTHORIZED))
    detections = []
    field = SensingField(sim, params, [1], [9], detections.append, history=5)
    sim.on(EventKind.SENSOR_BEACON, lambda event: field.on_event(event.payload))
    field.start(80.0)
    sim.run_until(82.0)
    assert len(detections) == 40
    assert len(field.events) == 5
    assert [e.event_id for e in field.events] == [36, 37, 38, 39, 40]
