"""
行为自动机测试
"""

import math
import unittest
from dataclasses import replace

import numpy as np
from scipy import stats

from leech_explorer.modules.behavior import (
    AgentState, BehaviorParams, Mode, draw_wall_side, load_default_params, move, parse_params, return_probability,
    serialize_params, transition,
)
from leech_explorer.modules.engine import thermal_field
from leech_explorer.modules.floorplan import ECE_START, Heading, load_bundled_plan, parse_plan
from leech_explorer.utils.errors import FormatError, ValidationError
from leech_explorer.utils.rng import RandomStream

ENCLOSED = parse_plan('scale_mm_per_cell=1.0\n###\n#A#\n###\n')
DEAD_END = parse_plan('scale_mm_per_cell=1.0\n#####\n#AAA#\n#####\n')
SQUARE = parse_plan('scale_mm_per_cell=1.0\n' + '\n'.join(['########'] + ['#AAAAAA#'] * 6 + ['########']) + '\n')
CORRIDOR = parse_plan('scale_mm_per_cell=1.0\n' + '#' * 30 + '\n#' + 'A' * 28 + 'X\n' + '#' * 30 + '\n')


def step(state: AgentState, plan, params: BehaviorParams, rng: RandomStream, field=None) -> AgentState:
    mode = transition(state, state.contact, params, rng)
    return move(replace(state, mode=mode), plan, params, field, rng)


class TestReturnProbability(unittest.TestCase):
    """返回概率测试"""

    def test_examples(self):
        params = BehaviorParams(p0_return=0.4, d_max=40.0)
        self.assertEqual(return_probability(0.0, params), 0.4)
        self.assertEqual(return_probability(40.0, params), 0.0)
        self.assertAlmostEqual(return_probability(20.0, params), 0.2)
        self.assertEqual(return_probability(400.0, params), 0.0)

    def test_non_increasing_and_bounded(self):
        params = BehaviorParams(p0_return=0.7, d_max=13.0)
        values = [return_probability(d, params) for d in np.linspace(0, 30, 301)]
        for a, b in zip(values, values[1:]):
            self.assertGreaterEqual(a, b)
        self.assertTrue(all(0.0 <= v <= 0.7 for v in values))


class TestTransition(unittest.TestCase):
    """模式转换测试"""

    def setUp(self):
        self.rng = RandomStream(12345)

    def state(self, mode: Mode, dist: float = 0.0) -> AgentState:
        return AgentState(pos=(1, 1), heading=Heading.E, mode=mode, dist_since_contact=dist)

    def test_contact_transitions(self):
        params = BehaviorParams()
        self.assertIs(transition(self.state(Mode.SWIMMING), True, params, self.rng), Mode.CRAWLING)
        self.assertIs(transition(self.state(Mode.CRAWLING), True, params, self.rng), Mode.EXPLORING)
        self.assertIs(transition(self.state(Mode.EXPLORING), True, params, self.rng), Mode.EXPLORING)
        self.assertIs(transition(self.state(Mode.SWIMMING), False, params, self.rng), Mode.SWIMMING)

    def test_exploring_beyond_decay_span_never_returns(self):
        params = BehaviorParams(p0_return=1.0, d_max=10.0)
        for _ in range(1000):
            self.assertIs(transition(self.state(Mode.EXPLORING, dist=10.0), False, params, self.rng), Mode.EXPLORING)

    def test_exploring_returns_at_contact_point(self):
        params = BehaviorParams(p0_return=1.0)
        self.assertIs(transition(self.state(Mode.EXPLORING), False, params, self.rng), Mode.CRAWLING)

    def test_spontaneous_swim_and_rest(self):
        self.assertIs(transition(self.state(Mode.CRAWLING), False, BehaviorParams(p_swim_spont=1.0), self.rng),
                      Mode.SWIMMING)
        params = BehaviorParams(p_swim_spont=0.0, p_rest_enter=1.0)
        self.assertIs(transition(self.state(Mode.CRAWLING), False, params, self.rng), Mode.RESTING)
        self.assertIs(transition(self.state(Mode.RESTING), False, BehaviorParams(p_rest_exit=1.0), self.rng),
                      Mode.CRAWLING)
        self.assertIs(transition(self.state(Mode.RESTING), True, BehaviorParams(p_rest_exit=0.0), self.rng),
                      Mode.RESTING)

    def test_swim_and_rest_share_one_draw(self):
        """一次抽样：u < p_swim 游泳，u < p_swim + p_rest 休息"""
        params = BehaviorParams(p_swim_spont=0.3, p_rest_enter=0.5)
        n = 20000
        outcomes = [transition(self.state(Mode.CRAWLING), False, params, self.rng) for _ in range(n)]
        self.assertAlmostEqual(outcomes.count(Mode.SWIMMING) / n, 0.3, delta=0.02)
        self.assertAlmostEqual(outcomes.count(Mode.RESTING) / n, 0.5, delta=0.02)
        self.assertAlmostEqual(outcomes.count(Mode.CRAWLING) / n, 0.2, delta=0.02)

    def test_transition_consumes_one_uniform(self):
        params = BehaviorParams(p_swim_spont=0.3, p_rest_enter=0.5)
        rng, twin = RandomStream(9), RandomStream(9)
        for _ in range(200):
            transition(self.state(Mode.CRAWLING), False, params, rng)
            twin.random()
        self.assertEqual(rng.random(), twin.random())

    def test_swim_and_rest_filling_the_unit_interval(self):
        params = BehaviorParams(p_swim_spont=0.4, p_rest_enter=0.6)
        outcomes = {transition(self.state(Mode.CRAWLING), False, params, self.rng) for _ in range(2000)}
        self.assertEqual(outcomes, {Mode.SWIMMING, Mode.RESTING})

    def test_resting_unreachable_without_rest_probabilities(self):
        plan = load_bundled_plan()
        params = BehaviorParams(p_rest_enter=0.0, p_rest_exit=0.0, p_swim_spont=0.05)
        state = AgentState(pos=ECE_START, heading=Heading.W, mode=Mode.SWIMMING)
        for _ in range(5000):
            state = step(state, plan, params, self.rng)
            self.assertIsNot(state.mode, Mode.RESTING)


class TestParams(unittest.TestCase):
    """行为参数测试"""

    def test_validation(self):
        with self.assertRaises(ValidationError):
            BehaviorParams(p0_return=1.5)
        with self.assertRaises(ValidationError):
            BehaviorParams(d_max=0.0)
        with self.assertRaises(ValidationError):
            BehaviorParams(v_crawl=-1.0)
        with self.assertRaises(ValidationError):
            BehaviorParams(turn_sigma_explore=0.0)
        with self.assertRaises(ValidationError):
            BehaviorParams(p_left_wall=1.5)

    def test_parse_partial_file(self):
        params = parse_params('# 注释\nv_swim = 2.5\n\np0_return=0.1  # 行尾注释\n')
        self.assertEqual(params.v_swim, 2.5)
        self.assertEqual(params.p0_return, 0.1)
        self.assertEqual(params.d_max, BehaviorParams().d_max)

    def test_parse_errors(self):
        with self.assertRaises(FormatError):
            parse_params('speed=1.0\n')
        with self.assertRaises(FormatError):
            parse_params('v_swim=fast\n')
        with self.assertRaises(FormatError):
            parse_params('v_swim\n')
        with self.assertRaises(ValidationError):
            parse_params('p_rest_exit=2\n')

    def test_serialize(self):
        params = BehaviorParams(p0_return=0.123, d_max=77.5, taxis_beta=0.25)
        self.assertEqual(parse_params(serialize_params(params)), params)

    def test_bundled_defaults(self):
        self.assertEqual(load_default_params(), BehaviorParams())

    def test_wall_side_draw(self):
        rng = RandomStream(6)
        self.assertEqual({draw_wall_side(BehaviorParams(p_left_wall=1.0), rng) for _ in range(50)}, {-1})
        self.assertEqual({draw_wall_side(BehaviorParams(p_left_wall=0.0), rng) for _ in range(50)}, {1})
        lefts = sum(draw_wall_side(BehaviorParams(p_left_wall=0.25), rng) == -1 for _ in range(4000))
        self.assertAlmostEqual(lefts / 4000, 0.25, delta=0.03)


class TestMove(unittest.TestCase):
    """运动学测试"""

    def test_resting_is_stationary(self):
        state = AgentState(pos=(2, 1), heading=Heading.N, mode=Mode.RESTING, step=7)
        moved = move(state, DEAD_END, BehaviorParams(), None, RandomStream(1))
        self.assertEqual(moved.pos, (2, 1))
        self.assertEqual(moved.step, 8)

    def test_swimming_into_wall_registers_contact(self):
        params = BehaviorParams(v_swim=1.0)
        for seed in range(20):
            state = AgentState(pos=(1, 1), heading=Heading.W, mode=Mode.SWIMMING, dist_since_contact=5.0)
            moved = move(state, DEAD_END, params, None, RandomStream(seed))
            self.assertEqual(moved.pos, (1, 1))
            self.assertTrue(moved.contact)
            self.assertEqual(moved.dist_since_contact, 0.0)
            self.assertIs(transition(moved, moved.contact, params, RandomStream(seed)), Mode.CRAWLING)

    def test_enclosed_agent_stays_put(self):
        params = BehaviorParams(v_explore=1.0)
        rng = RandomStream(3)
        for mode in (Mode.SWIMMING, Mode.CRAWLING, Mode.EXPLORING):
            for heading in Heading:
                moved = move(AgentState(pos=(1, 1), heading=heading, mode=mode), ENCLOSED, params, None, rng)
                self.assertEqual(moved.pos, (1, 1))
                self.assertTrue(moved.contact)

    def test_distance_accumulates_without_contact(self):
        params = BehaviorParams(v_swim=1.0)
        state = AgentState(pos=(3, 3), heading=Heading.E, mode=Mode.SWIMMING, dist_since_contact=2.0)
        moved = move(state, SQUARE, params, None, RandomStream(11))
        self.assertFalse(moved.contact)
        expected = 2.0 + (2 if moved.heading.is_diagonal else 1)
        self.assertEqual(moved.dist_since_contact, expected)

    def test_never_on_wall(self):
        plan = load_bundled_plan()
        params = BehaviorParams(p_swim_spont=0.05, p_rest_enter=0.01, p_rest_exit=0.2, v_swim=2.6,
                                v_crawl=1.4, v_explore=0.9, wall_follow_side_flip=0.1)
        rng = RandomStream(2024)
        state = AgentState(pos=ECE_START, heading=Heading.W, mode=Mode.SWIMMING)
        seen = set()
        for _ in range(100000):
            state = step(state, plan, params, rng)
            self.assertTrue(plan.is_open(state.pos), state)
            if state.contact:
                self.assertEqual(state.dist_since_contact, 0.0)
            seen.add(state.mode)
            if plan.is_exit(state.pos):
                state = AgentState(pos=ECE_START, heading=Heading.W, mode=Mode.SWIMMING)
        self.assertEqual(seen, {Mode.RESTING, Mode.SWIMMING, Mode.CRAWLING, Mode.EXPLORING})

    def test_replay_is_deterministic(self):
        plan = load_bundled_plan()
        params = BehaviorParams()

        def run(seed):
            rng = RandomStream(seed)
            state = AgentState(pos=ECE_START, heading=Heading.W, mode=Mode.SWIMMING)
            out = []
            for _ in range(2000):
                state = step(state, plan, params, rng)
                out.append((state.pos, state.mode, state.heading))
            return out

        self.assertEqual(run(99), run(99))
        self.assertNotEqual(run(99), run(100))

    def test_zero_gain_ignores_field(self):
        field = thermal_field(SQUARE, {(1, 1)}, source_temp=70.0, ambient=20.0)
        params = BehaviorParams(taxis_beta=0.0)
        for mode in (Mode.SWIMMING, Mode.CRAWLING):
            a = b = AgentState(pos=(4, 4), heading=Heading.N, mode=mode)
            rng_a, rng_b = RandomStream(5), RandomStream(5)
            for _ in range(500):
                a = step(a, SQUARE, params, rng_a, field)
                b = step(b, SQUARE, params, rng_b, None)
                self.assertEqual(a, b)

    def test_taxis_moves_towards_warmth(self):
        field = thermal_field(CORRIDOR, {(1, 1)}, source_temp=70.0, ambient=20.0)
        params = BehaviorParams(p0_return=0.0, v_explore=1.0, taxis_beta=2.0)
        warm = 0
        for seed in range(10):
            rng = RandomStream(seed)
            state = AgentState(pos=(15, 1), heading=Heading.E, mode=Mode.EXPLORING)
            for _ in range(40):
                state = step(state, CORRIDOR, params, rng, field)
            warm += state.pos[0] < 8
        self.assertGreaterEqual(warm, 8)

    def test_large_gain_does_not_overflow(self):
        """增益 500、温差约 1.8 度时指数远超浮点上限，仍应正常选出最暖方向"""
        field = thermal_field(CORRIDOR, {(1, 1)}, source_temp=70.0, ambient=20.0)
        params = BehaviorParams(p0_return=0.0, v_explore=1.0, v_swim=1.0, taxis_beta=500.0)
        for seed in range(10):
            for mode in (Mode.EXPLORING, Mode.SWIMMING):
                state = AgentState(pos=(15, 1), heading=Heading.E, mode=mode)
                moved = move(state, CORRIDOR, params, field, RandomStream(seed))
                self.assertIs(moved.heading, Heading.W)
                self.assertEqual(moved.pos, (14, 1))

    def test_crawl_turns_back_towards_warmth(self):
        """一格宽走廊里向冷端爬行：强趋热时掉头并换手，零增益时照常前进"""
        field = thermal_field(CORRIDOR, {(1, 1)}, source_temp=70.0, ambient=20.0)
        for side in (1, -1):
            state = AgentState(pos=(15, 1), heading=Heading.E, mode=Mode.CRAWLING, wall_side=side)
            for seed in range(10):
                params = BehaviorParams(v_crawl=1.0, wall_follow_side_flip=0.0, taxis_beta=500.0)
                moved = move(state, CORRIDOR, params, field, RandomStream(seed))
                self.assertEqual((moved.pos, moved.heading, moved.wall_side), ((14, 1), Heading.W, -side))
                moved = move(state, CORRIDOR, replace(params, taxis_beta=0.0), field, RandomStream(seed))
                self.assertEqual((moved.pos, moved.heading, moved.wall_side), ((16, 1), Heading.E, side))

    def test_crawl_turns_to_keep_wall_on_hand_side(self):
        """墙在另一侧而手侧空旷时掉头，让墙回到手侧"""
        params = BehaviorParams(v_crawl=1.0, wall_follow_side_flip=0.0)
        # 沿上墙向东：上墙在左手侧
        right = AgentState(pos=(3, 1), heading=Heading.E, mode=Mode.CRAWLING, wall_side=1)
        moved = move(right, SQUARE, params, None, RandomStream(4))
        self.assertEqual((moved.pos, moved.heading), ((2, 1), Heading.W))
        left = replace(right, wall_side=-1)
        moved = move(left, SQUARE, params, None, RandomStream(4))
        self.assertEqual((moved.pos, moved.heading), ((4, 1), Heading.E))
        self.assertFalse(moved.contact)


class TestOccupancy(unittest.TestCase):
    """开阔方形区域内的长期占据分布均匀"""

    def test_uniform_occupancy(self):
        """10^6 步，每 100 步取样一次使样本近似独立"""
        n_steps = 10 ** 6
        thin = 100
        params = BehaviorParams(p0_return=0.0, v_explore=1.0, turn_sigma_explore=90.0)
        rng = RandomStream(77)
        state = AgentState(pos=(3, 3), heading=Heading.E, mode=Mode.EXPLORING)
        counts = np.zeros(SQUARE.shape, dtype=np.int64)
        for i in range(n_steps):
            state = step(state, SQUARE, params, rng)
            if i % thin == 0:
                counts[state.pos[1], state.pos[0]] += 1
        observed = counts[SQUARE.open_mask]
        self.assertEqual(len(observed), 36)
        _, p_value = stats.chisquare(observed)
        self.assertGreater(p_value, 1e-3)

        # 按离墙距离分三圈（20、12、4 格），贴墙偏置会体现在圈占比上
        total = int(observed.sum())
        ys, xs = np.nonzero(SQUARE.open_mask)
        ring = np.minimum.reduce([xs - 1, 6 - xs, ys - 1, 6 - ys])
        ring_counts = np.bincount(ring, weights=counts[ys, xs], minlength=3)
        for r, cells in enumerate((20, 12, 4)):
            p = cells / 36
            sigma = math.sqrt(total * p * (1 - p))
            self.assertLessEqual(abs(ring_counts[r] - total * p), 3 * sigma, (r, ring_counts))


if __name__ == '__main__':
    unittest.main()
