import math

import numpy as np
import pytest
from unittest.mock import patch

from src.models.handover_model import EnvelopeSegment, HandoverType
from src.models.scenario_model import HeadPoint, ScenarioConfig
from src.services.envelope_service import (
    classify,
    distances_at,
    downward_crossings,
    earliest_crossing,
    extract_handovers,
    lower_envelope,
    shift_realization,
    simulate_replica,
    visible_heads,
)
from src.services.point_process_service import sample_heads, size_window
from src.utils.errors import EmptyRealization, Overflow, VoidViolation
from src.utils.geometry import bird_heights
from src.utils.rng import STREAM_HEADS, make_rng


def _grid_serving(real, n=20001):
    """Index of the lowest bird on a dense grid of the window"""
    grid = np.linspace(real.config.t_start, real.config.t_end, n)
    speeds = real.speeds
    heights = bird_heights(real.t[:, None], real.h[:, None], speeds[:, None], grid[None, :])
    return grid, np.argmin(heights, axis=0)


class TestLowerEnvelope:
    """Test the exact lower envelope"""

    def test_three_heads(self, three_head_realization):
        """Test serving sequence and breakpoints of the three-head instance"""
        segments = lower_envelope(three_head_realization)
        assert [seg.serving.t for seg in segments] == [-1.0, 1.0, 5.0]
        assert [seg.t_to for seg in segments[:-1]] == pytest.approx([0.0, 3.0])
        assert segments[0].t_from == -2.0
        assert segments[-1].t_to == 6.0

    def test_single_head(self, realization_factory):
        """Test one head serves the whole window"""
        real = realization_factory([HeadPoint(t=1.0, h=0.5)], [1.0])
        segments = lower_envelope(real)
        assert len(segments) == 1
        assert (segments[0].t_from, segments[0].t_to) == (-2.0, 6.0)

    def test_empty(self, realization_factory):
        """Test a realization without heads"""
        with pytest.raises(EmptyRealization):
            lower_envelope(realization_factory([], [1.0]))

    def test_reappearing_slow_bird(self, piercing_realization):
        """Test a fast bird dipping under a slow one serves between its two crossings"""
        segments = lower_envelope(piercing_realization)
        assert [seg.serving.cls for seg in segments] == [2, 1, 2]
        assert segments[0].serving == segments[2].serving
        root = math.sqrt(0.2)
        assert segments[0].t_to == pytest.approx(-root)
        assert segments[1].t_to == pytest.approx(root)

    def test_overflow_flag(self, realization_factory):
        """Test an envelope above h_max sets the overflow flag"""
        real = realization_factory([HeadPoint(t=0.0, h=1.0)], [1.0], h_max=2.0)
        lower_envelope(real)
        assert real.overflow_flag is True
        with pytest.raises(Overflow):
            extract_handovers(lower_envelope(real), real)

    @pytest.mark.parametrize("speeds", [[1.0], [2.0, 1.0], [3.0, 1.5, 0.5]])
    def test_matches_grid_oracle(self, realization_factory, speeds):
        """Test segments agree with the dense-grid argmin away from breakpoints"""
        rng = np.random.default_rng(len(speeds))
        for _ in range(20):
            n = int(rng.integers(2, 40))
            heads = [
                HeadPoint(t=float(t), h=float(h), cls=int(c))
                for t, h, c in zip(
                    rng.uniform(-4.0, 8.0, n), rng.uniform(0.0, 3.0, n), rng.integers(1, len(speeds) + 1, n)
                )
            ]
            real = realization_factory(heads, speeds)
            segments = lower_envelope(real)
            grid, argmin = _grid_serving(real)
            edges = np.array([seg.t_to for seg in segments[:-1]])
            for k, t in enumerate(grid):
                if edges.size and np.min(np.abs(edges - t)) < 1e-3:
                    continue
                seg = next(s for s in segments if s.t_from <= t <= s.t_to)
                assert real.head(int(argmin[k])) == seg.serving

    def test_time_shift(self, three_head_realization):
        """Test shifting heads and window shifts every breakpoint"""
        shifted = shift_realization(three_head_realization, 2.5)
        a = lower_envelope(three_head_realization)
        b = lower_envelope(shifted)
        assert [s.t_to + 2.5 for s in a] == pytest.approx([s.t_to for s in b])


class TestHandovers:
    """Test handover extraction and classification"""

    def test_three_head_events(self, three_head_realization):
        """Test events at (0, sqrt 2) and (3, sqrt 5)"""
        events = extract_handovers(lower_envelope(three_head_realization), three_head_realization)
        assert [e.s for e in events] == pytest.approx([0.0, 3.0])
        assert [e.h for e in events] == pytest.approx([math.sqrt(2.0), math.sqrt(5.0)])
        assert all(e.type == HandoverType(q=1, tau_p=1, tau_n=1) for e in events)

    def test_symmetric_pair(self, realization_factory):
        """Test two symmetric heads hand over at (0, sqrt 2)"""
        real = realization_factory([HeadPoint(t=-1.0, h=1.0), HeadPoint(t=1.0, h=1.0)], [1.0])
        events = extract_handovers(lower_envelope(real), real)
        assert len(events) == 1
        assert events[0].s == pytest.approx(0.0)
        assert events[0].h == pytest.approx(math.sqrt(2.0))

    def test_single_head_no_events(self, realization_factory):
        """Test one head produces no handover"""
        real = realization_factory([HeadPoint(t=0.0, h=1.0)], [1.0])
        assert extract_handovers(lower_envelope(real), real) == []

    def test_mixed_types(self, piercing_realization):
        """Test slow to fast and back give the two q = 1 mixed types"""
        events = extract_handovers(lower_envelope(piercing_realization), piercing_realization)
        assert [e.type.label for e in events] == ["[[1;2,1]]", "[[1;1,2]]"]
        assert events[0].type.old_label == "binom(1;2,1)"
        assert [e.h for e in events] == pytest.approx([math.sqrt(4.2)] * 2)

    def test_void_violation(self, three_head_realization):
        """Test a forged breakpoint with a head underneath is rejected"""
        segments = lower_envelope(three_head_realization)
        # serve (-1, 1) straight to (5, 1) at their crossing s = 2, over the head (1, 1)
        forged = [
            EnvelopeSegment(t_from=-2.0, t_to=2.0, serving=segments[0].serving),
            EnvelopeSegment(t_from=2.0, t_to=6.0, serving=segments[2].serving),
        ]
        with pytest.raises(VoidViolation):
            extract_handovers(forged, three_head_realization)

    def test_boundary_flag(self, realization_factory):
        """Test events inside the guard band are flagged"""
        heads = [HeadPoint(t=-1.0, h=1.0), HeadPoint(t=1.0, h=1.0), HeadPoint(t=5.0, h=1.0)]
        real = realization_factory(heads, [1.0], guard=2.5)
        events = extract_handovers(lower_envelope(real), real)
        assert [e.boundary for e in events] == [True, False]

    @pytest.mark.parametrize(
        "prev,nxt,label,old",
        [
            (HeadPoint(t=0.0, h=1.0, cls=1), HeadPoint(t=2.0, h=1.0, cls=1), "[[1;1,1]]", "binom(1;1,1)"),
            (HeadPoint(t=0.0, h=1.0, cls=2), HeadPoint(t=2.0, h=1.0, cls=1), "[[1;2,1]]", "binom(1;2,1)"),
            (HeadPoint(t=2.0, h=1.0, cls=1), HeadPoint(t=0.0, h=1.0, cls=2), "[[2;1,2]]", "binom(2;2,1)"),
        ],
    )
    def test_classify(self, prev, nxt, label, old):
        """Test types and their old notation"""
        t = classify(
            None,
            EnvelopeSegment(t_from=-1.0, t_to=1.0, serving=prev),
            EnvelopeSegment(t_from=1.0, t_to=3.0, serving=nxt),
        )
        assert t.label == label
        assert t.old_label == old
        assert HandoverType.from_old(*t.old_notation) == t


class TestVisibleHeadsAndDistances:
    """Test visible heads and distances at a time"""

    def test_all_visible(self, three_head_realization):
        """Test every head of the three-head instance is visible"""
        segments = lower_envelope(three_head_realization)
        assert [p.t for p in visible_heads(segments)] == [-1.0, 1.0, 5.0]

    def test_covered_head_not_visible(self, realization_factory):
        """Test a head serving only on one wing is excluded"""
        # (0.8, 1.2) serves briefly right of its head, under its deeper left neighbour
        heads = [HeadPoint(t=0.0, h=0.2), HeadPoint(t=0.8, h=1.2), HeadPoint(t=3.0, h=0.2)]
        real = realization_factory(heads, [1.0])
        segments = lower_envelope(real)
        visible = visible_heads(segments)
        assert HeadPoint(t=0.8, h=1.2) not in visible
        assert HeadPoint(t=0.0, h=0.2) in visible

    def test_repeated_serving_head_listed_once(self):
        """Test a head serving several segments that touch its apex appears once, in order"""
        a, b, c = HeadPoint(t=0.0, h=1.0), HeadPoint(t=2.0, h=0.5, cls=2), HeadPoint(t=5.0, h=1.0)
        segments = [
            EnvelopeSegment(t_from=-1.0, t_to=0.0, serving=a),
            EnvelopeSegment(t_from=0.0, t_to=1.0, serving=a),
            EnvelopeSegment(t_from=1.0, t_to=3.0, serving=b),
            EnvelopeSegment(t_from=3.0, t_to=4.0, serving=a),
            EnvelopeSegment(t_from=4.0, t_to=6.0, serving=c),
        ]
        assert visible_heads(segments) == [a, b, c]

    def test_distances_at(self, three_head_realization):
        """Test sorted distances at t = 0"""
        np.testing.assert_allclose(
            distances_at(0.0, three_head_realization), [math.sqrt(2.0), math.sqrt(2.0), math.sqrt(26.0)]
        )

    def test_distance_at_head(self, three_head_realization):
        """Test the nearest distance at a head abscissa is at most its height"""
        assert distances_at(1.0, three_head_realization)[0] <= 1.0


class TestCrossings:
    """Test the sweep primitives"""

    def test_same_speed_only_from_the_right(self):
        """Test a same-speed bird crosses downward only if its head is to the right"""
        out = downward_crossings(0.0, 1.0, 1.0, [2.0, -2.0], [1.0, 1.0], [1.0, 1.0])
        assert out[0] == pytest.approx(1.0)
        assert np.isnan(out[1])

    def test_faster_bird_first_root(self):
        """Test a faster bird dips under at its first root"""
        out = downward_crossings(3.0, 1.0, 1.0, [0.0], [2.0], [2.0])
        assert out[0] == pytest.approx(-1.0 - math.sqrt(3.0))

    def test_slower_bird_second_root(self):
        """Test a slower bird dips under a fast serving bird at the second root"""
        out = downward_crossings(0.0, 2.0, 2.0, [3.0], [1.0], [1.0])
        assert out[0] == pytest.approx(-1.0 + math.sqrt(3.0))

    def test_earliest_tie_break(self):
        """Test ties go to the smaller abscissa, then the smaller class"""
        times = np.array([1.0, 1.0, 1.0, np.nan])
        assert earliest_crossing(times, 0.0, np.array([2.0, 1.0, 1.0, 0.0]), np.array([1, 2, 1, 1])) == 2
        assert earliest_crossing(times, 1.0, np.zeros(4), np.ones(4)) is None


class TestSimulateReplica:
    """Test one full replica"""

    @pytest.fixture
    def config(self):
        """Single-speed scenario"""
        return ScenarioConfig(classes=[{"v": 1.0, "lambda": 1.0}], window=(0.0, 30.0), seed=4)

    def test_deterministic(self, config):
        """Test a replica is reproducible bit for bit"""
        a = simulate_replica(config, replica=2)
        b = simulate_replica(config, replica=2)
        assert a.events == b.events
        np.testing.assert_array_equal(a.realization.t, b.realization.t)

    def test_replicas_differ(self, config):
        """Test replicas use independent streams"""
        a = simulate_replica(config, replica=0)
        b = simulate_replica(config, replica=1)
        assert a.events != b.events

    def test_heads_come_from_replica_stream(self, config):
        """Test the first attempt draws from the (seed, replica, heads, 0) stream"""
        out = simulate_replica(config, replica=3)
        expected = sample_heads(config, size_window(config), make_rng(config.seed, 3, STREAM_HEADS, 0), 3)
        np.testing.assert_array_equal(out.realization.t, expected.t)
        np.testing.assert_array_equal(out.realization.h, expected.h)

    def test_events_pass_void_checks(self, config):
        """Test every event sits on the envelope with empty void regions"""
        out = simulate_replica(config, replica=0)
        assert out.events
        assert len(out.events) == len(out.segments) - 1
        real = out.realization
        for e in out.events:
            d = distances_at(e.s, real)
            assert d[0] == pytest.approx(e.h, rel=1e-9)

    def test_two_speed_replica(self, two_speed_config):
        """Test a two-speed replica yields typed events"""
        out = simulate_replica(two_speed_config, replica=0)
        labels = {e.type.label for e in out.events}
        assert "[[1;1,1]]" in labels or "[[1;2,2]]" in labels
        assert all(e.type.tau_p == e.prev_head.cls for e in out.events)

    def test_retry_after_overflow(self, config):
        """Test an overflowing first attempt is resampled on a larger window"""
        calls = []

        def flaky(real):
            segments = lower_envelope(real)
            calls.append(real.window.h_max)
            if len(calls) == 1:
                real.overflow_flag = True
            return segments

        with patch("src.services.envelope_service.lower_envelope", side_effect=flaky):
            out = simulate_replica(config)
        assert out.retries == 1
        assert calls[1] == pytest.approx(2.0 * calls[0])

    def test_persistent_overflow(self, config):
        """Test retries stop after the limit"""

        def overflowing(real):
            real.overflow_flag = True
            return []

        with patch("src.services.envelope_service.lower_envelope", side_effect=overflowing) as mock_envelope:
            with pytest.raises(Overflow):
                simulate_replica(config, max_retries=2)
        assert mock_envelope.call_count == 3
