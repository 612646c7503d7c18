import math

import numpy as np
import pytest

from promptevo.errors import NonFiniteError
from promptevo.evolve import (
    AdamState,
    EvolveConfig,
    adam_ascent_step,
    evolve,
    initial_prompt,
    score_and_grad,
)
from promptevo.field import Prompt, centroid
from promptevo.gradcheck import check_prompt_chain, random_params
from promptevo.oracle import zero_params
from promptevo.phantom import PhantomSpec, generate_phantom
from promptevo.segmenter import PromptableSegmenter, SegmenterConfig, SurrogateSegmenter

SPEC32 = PhantomSpec(width=32, height=32)


def adam_two_steps(p, g1, g2, lr=10.0, b1=0.9, b2=0.999, eps=1e-8):
    """Closed form of two Adam ascent steps from zero moments."""
    x = np.array(p, dtype=float)
    g1, g2 = np.asarray(g1, float), np.asarray(g2, float)
    x1 = x + lr * g1 / (np.abs(g1) + eps)
    m = b1 * (1 - b1) * g1 + (1 - b1) * g2
    v = b2 * (1 - b2) * g1**2 + (1 - b2) * g2**2
    mh, vh = m / (1 - b1**2), v / (1 - b2**2)
    return x1, x1 + lr * mh / (np.sqrt(vh) + eps)


class TestAdamStep:
    def test_first_step_is_sign_like(self):
        s, q = adam_ascent_step(AdamState(), Prompt(10, 10), [0.3, -2.0])
        assert q.x == pytest.approx(10 + 10 * 0.3 / (0.3 + 1e-8), abs=1e-12)
        assert q.y == pytest.approx(10 - 10 * 2.0 / (2.0 + 1e-8), abs=1e-12)
        assert s.t == 1 and q.c == 1

    def test_two_steps_closed_form(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            g1, g2 = rng.normal(size=2), rng.normal(size=2)
            p0 = rng.uniform(20, 40, size=2)
            s, q1 = adam_ascent_step(AdamState(), Prompt(*p0), g1)
            s, q2 = adam_ascent_step(s, q1, g2)
            e1, e2 = adam_two_steps(p0, g1, g2)
            assert np.allclose(q1.as_array(), e1, atol=1e-12, rtol=0)
            assert np.allclose(q2.as_array(), e2, atol=1e-12, rtol=0)

    def test_zero_gradient_does_not_move(self):
        s, q = adam_ascent_step(AdamState(), Prompt(5.5, 7.25), [0.0, 0.0])
        assert (q.x, q.y) == (5.5, 7.25)

    def test_clamped(self):
        _, q = adam_ascent_step(AdamState(lr=100), Prompt(3, 3), [1.0, -1.0], shape=(32, 32))
        assert (q.x, q.y) == (31.0, 0.0)
        _, q = adam_ascent_step(AdamState(lr=100), Prompt(3, 3), [1.0, -1.0], shape=(32, 32), margin=2)
        assert (q.x, q.y) == (29.0, 2.0)

    @pytest.mark.parametrize("bad", [math.nan, math.inf])
    def test_nonfinite_gradient(self, bad):
        with pytest.raises(NonFiniteError):
            adam_ascent_step(AdamState(), Prompt(1, 1), [bad, 0.0])


class TestScoreAndGrad:
    def test_zero_params(self):
        s = generate_phantom(SPEC32, 0)
        score, grad, mask = score_and_grad(s.image, initial_prompt(s.gt), SurrogateSegmenter(), 10, zero_params())
        assert score == 0.5
        assert not grad.any()
        assert mask.shape == (32, 32)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        seg = SurrogateSegmenter()
        errs = []
        for i in range(30):
            s = generate_phantom(SPEC32, 100 + i)
            params = random_params(rng, (32, 32))
            p = Prompt(*rng.uniform(4, 27, size=2))
            e = check_prompt_chain(s.image, p, seg, 10, params)
            if e is not None:
                errs.append(e)
        assert len(errs) >= 5
        assert max(errs) < 2e-2

    def test_black_box_segmenter_agrees_with_analytic(self):
        class Opaque(SurrogateSegmenter):
            prompt_vjp = PromptableSegmenter.prompt_vjp

        s = generate_phantom(SPEC32, 3)
        params = random_params(np.random.default_rng(2), (32, 32))
        p = initial_prompt(s.gt)
        _, ga, _ = score_and_grad(s.image, p, SurrogateSegmenter(), 10, params)
        _, gb, _ = score_and_grad(s.image, p, Opaque(), 10, params)
        assert np.allclose(ga, gb, rtol=1e-2, atol=1e-6)


@pytest.fixture(scope="module")
def setup():
    s = generate_phantom(SPEC32, 7)
    params = random_params(np.random.default_rng(3), (32, 32))
    return s, params


class TestEvolve:
    def test_zero_params_stay_put(self, setup):
        s, _ = setup
        p0 = initial_prompt(s.gt)
        best, traj = evolve(s.image, p0, zero_params(), EvolveConfig(iterations=1))
        assert best == p0
        assert len(traj) == 2
        assert traj.steps[0].prompt == traj.steps[1].prompt == p0
        assert traj.best == 0

    def test_best_dominates_start(self, setup):
        s, params = setup
        for seed in range(5):
            p0 = Prompt(*np.random.default_rng(seed).uniform(5, 26, size=2))
            best, traj = evolve(s.image, p0, params, EvolveConfig(iterations=15))
            assert traj.best_step.score >= traj.steps[0].score
            assert traj.best_step.score == max(st.score for st in traj.steps)
            assert best == traj.best_step.prompt
            assert len(traj) == 16

    def test_frozen_models(self, setup):
        s, params = setup
        before = [a.copy() for a in params.all_arrays()]
        seg = SurrogateSegmenter(SegmenterConfig())
        cfg_before = seg.cfg
        evolve(s.image, initial_prompt(s.gt), params, EvolveConfig(iterations=10), seg)
        assert all(np.array_equal(a, b) for a, b in zip(before, params.all_arrays()))
        assert seg.cfg == cfg_before

    def test_stays_on_grid(self, setup):
        s, params = setup
        _, traj = evolve(s.image, Prompt(1, 1), params, EvolveConfig(iterations=20, lr=50, clamp_margin=1))
        for st in traj.steps:
            assert 1 <= st.prompt.x <= 30 and 1 <= st.prompt.y <= 30

    def test_dice_recorded_only_with_truth(self, setup):
        s, params = setup
        _, a = evolve(s.image, initial_prompt(s.gt), params, EvolveConfig(iterations=2))
        _, b = evolve(s.image, initial_prompt(s.gt), params, EvolveConfig(iterations=2), gt=s.gt)
        assert all(st.dice is None for st in a.steps)
        assert all(0 <= st.dice <= 1 for st in b.steps)
        assert [st.prompt for st in a.steps] == [st.prompt for st in b.steps]

    def test_nonfinite_initial_score(self, setup):
        s, params = setup
        bad = params.copy()
        bad.biases[4][:] = math.nan
        with pytest.raises(NonFiniteError):
            evolve(s.image, initial_prompt(s.gt), bad, EvolveConfig(iterations=2))

    def test_trajectory_csv(self, setup, tmp_path):
        s, params = setup
        _, traj = evolve(s.image, initial_prompt(s.gt), params, EvolveConfig(iterations=3), gt=s.gt)
        path = tmp_path / "t.csv"
        traj.write_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "iter,x,y,score,dice"
        assert len(lines) == 5
        assert float(lines[1].split(",")[3]) == traj.steps[0].score


class TestInitialPrompt:
    def test_convex_uses_centroid(self):
        m = np.zeros((10, 10))
        m[2:7, 3:6] = 1
        assert initial_prompt(m) == centroid(m)

    def test_crescent_snaps_inside(self):
        yy, xx = np.mgrid[0:21, 0:21]
        m = (((xx - 10) ** 2 + (yy - 10) ** 2 <= 64) & ((xx - 13) ** 2 + (yy - 10) ** 2 > 36)).astype(float)
        c = centroid(m)
        assert m[int(round(c.y)), int(round(c.x))] == 0
        p = initial_prompt(m)
        assert m[int(p.y), int(p.x)] == 1
        ys, xs = np.nonzero(m)
        assert (p.x - c.x) ** 2 + (p.y - c.y) ** 2 == pytest.approx(np.min((xs - c.x) ** 2 + (ys - c.y) ** 2))
