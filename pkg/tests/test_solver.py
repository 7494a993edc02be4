import math

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from oracles import grid_search_translation, make_ray_scene, ray_energy
from raylift.camera import project
from raylift.errors import AllKeypointsMaskedError, TooFewCorrespondencesError
from raylift.solver import (
    Correspondence,
    FrameEstimate,
    SolverConfig,
    condition_number,
    lift_frame,
    projector,
    residual,
    solve_translation,
)


def make_corrs(joints, rays, weights=None):
    if weights is None:
        weights = np.ones(len(joints))
    return [Correspondence(j, d, w) for j, d, w in zip(joints, rays, weights)]


class TestProjector:
    def test_axis_aligned(self):
        np.testing.assert_allclose(projector(np.array([0.0, 0.0, 1.0])), np.diag([1.0, 1.0, 0.0]))

    def test_annihilates_ray(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
            pi = projector(d)
            np.testing.assert_allclose(pi @ d, 0.0, atol=1e-14)
            np.testing.assert_allclose(pi, pi.T)
            np.testing.assert_allclose(pi @ pi, pi, atol=1e-14)

    def test_rank_two(self):
        rng = np.random.default_rng(6)
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        assert abs(np.trace(projector(d)) - 2.0) < 1e-13


class TestResidual:
    def test_on_ray_vanishes(self):
        d = np.array([0.6, 0.0, 0.8])
        c = Correspondence(joint=3.5 * d - np.array([1.0, 2.0, 3.0]), ray=d, weight=1.0)
        np.testing.assert_allclose(residual(np.array([1.0, 2.0, 3.0]), c), 0.0, atol=1e-12)

    def test_axis_projection(self):
        c = Correspondence(joint=np.array([3.0, 4.0, 10.0]), ray=np.array([0.0, 0.0, 1.0]), weight=1.0)
        r = residual(np.zeros(3), c)
        np.testing.assert_allclose(r, [3.0, 4.0, 0.0])
        assert abs(np.linalg.norm(r) - 5.0) < 1e-12

    def test_cross_product_identity(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
            c = Correspondence(joint=rng.uniform(-50, 50, 3), ray=d, weight=0.7)
            t = rng.uniform(-50, 50, 3)
            r = residual(t, c)
            assert abs(np.linalg.norm(r) - np.linalg.norm(np.cross(t + c.joint, d))) < 1e-9


class TestConditionNumber:
    def test_matches_lapack(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            a = rng.normal(size=(3, 3))
            m = a @ a.T  # PSD
            eig = np.linalg.eigvalsh(m)
            assert condition_number(m) == pytest.approx(eig[-1] / eig[0], rel=1e-6)

    def test_singular_reports_inf(self):
        assert condition_number(np.diag([2.0, 1.0, 0.0])) == math.inf


class TestSolveTranslation:
    def test_points_on_rays_give_zero(self):
        rng = np.random.default_rng(1)
        rays = rng.normal(size=(8, 3))
        rays /= np.linalg.norm(rays, axis=1, keepdims=True)
        lam = rng.uniform(100, 500, size=8)
        corrs = make_corrs(lam[:, None] * rays, rays)
        est = solve_translation(corrs)
        assert np.linalg.norm(est.translation) < 1e-9
        assert est.energy < 1e-12
        assert est.damp_rounds == 0

    def test_recovers_synthetic_translation(self):
        rng = np.random.default_rng(42)
        for _ in range(10):
            t_gt, joints, rays = make_ray_scene(rng)
            # minimal stabilization: the exactness bound is about geometry,
            # not the Tikhonov bias (~eps * |t| / lambda_min)
            est = solve_translation(make_corrs(joints, rays), SolverConfig(epsilon=1e-12))
            assert np.linalg.norm(est.translation - t_gt) < 1e-6
            np.testing.assert_allclose(
                est.depths, np.linalg.norm(t_gt[None] + joints, axis=1), rtol=1e-8
            )

    def test_matches_grid_search(self):
        rng = np.random.default_rng(7)
        for _ in range(3):
            t_gt, joints, rays = make_ray_scene(rng, n_joints=12)
            w = rng.uniform(0.3, 1.0, size=12)
            est = solve_translation(make_corrs(joints, rays, w), SolverConfig(epsilon=1e-12))
            t_brute = grid_search_translation(joints, rays, w, est.translation)
            assert np.linalg.norm(est.translation - t_brute) < 1e-3

    def test_translation_equivariance(self):
        rng = np.random.default_rng(3)
        t_gt, joints, rays = make_ray_scene(rng)
        cfg = SolverConfig(epsilon=1e-12)
        delta = np.array([10.0, -20.0, 5.0])
        est0 = solve_translation(make_corrs(joints, rays), cfg)
        est1 = solve_translation(make_corrs(joints + delta, rays), cfg)
        np.testing.assert_allclose(est1.translation, est0.translation - delta, atol=1e-9)

    def test_gradient_identity_at_solution(self):
        rng = np.random.default_rng(11)
        t_gt, joints, rays = make_ray_scene(rng)
        w = rng.uniform(0.2, 1.0, size=len(joints))
        est = solve_translation(make_corrs(joints, rays, w), SolverConfig(epsilon=1e-12))
        wd = w[:, None] * rays
        mat = w.sum() * np.eye(3) - wd.T @ rays
        vec = w @ (joints - np.sum(rays * joints, axis=1, keepdims=True) * rays)
        grad = 2.0 * (mat @ est.translation + vec)
        assert np.linalg.norm(grad) < 1e-6 * (1.0 + np.linalg.norm(vec))

    def test_uniform_weight_scaling_invariance(self):
        rng = np.random.default_rng(13)
        t_gt, joints, rays = make_ray_scene(rng)
        w = rng.uniform(0.2, 1.0, size=len(joints))
        cfg = SolverConfig(epsilon=1e-12)
        est1 = solve_translation(make_corrs(joints, rays, w), cfg)
        est2 = solve_translation(make_corrs(joints, rays, 0.37 * w), cfg)
        np.testing.assert_allclose(est1.translation, est2.translation, atol=1e-9)

    def test_depth_elimination_identity(self):
        # E(t) through projectors == sum over joints of the 1-D minimum over depth
        rng = np.random.default_rng(17)
        for _ in range(100):
            t_gt, joints, rays = make_ray_scene(rng, n_joints=5)
            w = rng.uniform(0.2, 1.0, size=5)
            t = t_gt + rng.normal(scale=20.0, size=3)
            e_proj = ray_energy(t, joints, rays, w)
            e_min = 0.0
            for j, d, wi in zip(joints, rays, w):
                res = minimize_scalar(lambda lam: wi * np.sum((t + j - lam * d) ** 2) / wi)
                e_min += wi * np.sum((t + j - res.x * d) ** 2)
            assert abs(e_proj - e_min) < 1e-9 * max(1.0, e_proj)

    def test_too_few(self):
        with pytest.raises(TooFewCorrespondencesError):
            solve_translation(make_corrs(np.zeros((1, 3)), np.array([[0.0, 0.0, 1.0]])))

    def test_parallel_rays_guarded(self):
        # rays all along +z: depth is unobservable, damping must engage
        rng = np.random.default_rng(23)
        joints = rng.uniform(-40, 40, size=(24, 3))
        rays = np.tile(np.array([0.0, 0.0, 1.0]), (24, 1))
        w = np.ones(24)
        cfg = SolverConfig()
        est = solve_translation(make_corrs(joints, rays, w), cfg)
        assert np.all(np.isfinite(est.translation))
        assert est.damp_rounds >= 1
        assert est.kappa == math.inf
        # independent 2-D reduction with the damped weights and the same
        # stabilizer: per-axis closed form, no 3x3 linear algebra
        wd = w * cfg.damping**est.damp_rounds
        s = wd.sum()
        expect_xy = -s * joints[:, :2].mean(axis=0) / (s + cfg.epsilon)
        np.testing.assert_allclose(est.translation[:2], expect_xy, atol=1e-6)
        # stabilizer bias vs the raw weighted mean stays tiny
        np.testing.assert_allclose(est.translation[:2], -joints[:, :2].mean(axis=0), atol=1e-3)
        assert abs(est.translation[2]) < 1e-9  # gauge-fixed toward zero


class TestLiftFrame:
    def _frame(self, cam, rng, n=24, depth=420.0, noise=0.0):
        joints = rng.uniform(-70, 70, size=(n, 3))
        t_gt = np.array([rng.uniform(-40, 40), rng.uniform(-30, 30), depth])
        u, v = project(cam, t_gt[None] + joints)
        u = u + rng.normal(scale=noise, size=n) if noise else u
        v = v + rng.normal(scale=noise, size=n) if noise else v
        kps = np.stack([u, v, np.ones(n)], axis=1)
        return t_gt, joints, kps

    def test_noiseless_pinhole_exact(self, pinhole_cam):
        rng = np.random.default_rng(31)
        t_gt, joints, kps = self._frame(pinhole_cam, rng)
        out = lift_frame(pinhole_cam, kps, joints, SolverConfig(epsilon=1e-12))
        assert np.all(out.used)
        cs_gt = t_gt[None] + joints
        assert np.max(np.linalg.norm(out.camera_joints - cs_gt, axis=1)) < 1e-6

    def test_noisy_matches_grid_search(self, pinhole_cam):
        rng = np.random.default_rng(37)
        for _ in range(3):
            t_gt, joints, kps = self._frame(pinhole_cam, rng, depth=400.0, noise=1.0)
            out = lift_frame(pinhole_cam, kps, joints, SolverConfig(epsilon=1e-12))
            from raylift.camera import unproject_ray

            rays = unproject_ray(pinhole_cam, kps[:, 0], kps[:, 1])
            t_brute = grid_search_translation(joints, rays, kps[:, 2], out.estimate.translation)
            assert np.linalg.norm(out.estimate.translation - t_brute) < 1e-3

    def test_masking_rules(self, pinhole_cam):
        rng = np.random.default_rng(41)
        t_gt, joints, kps = self._frame(pinhole_cam, rng)
        kps[0, 0] = -5.0  # out of frame left
        kps[1, 1] = 1e5  # out of frame bottom
        kps[2, 2] = 0.0  # zero confidence
        out = lift_frame(pinhole_cam, kps, joints)
        assert not out.used[0] and not out.used[1] and not out.used[2]
        assert out.used[3:].all()
        assert out.estimate.depths.shape == (int(out.used.sum()),)

    def test_single_visible_keypoint(self, pinhole_cam):
        kps = np.array([[320.0, 240.0, 1.0], [320.0, 250.0, 0.0]])
        joints = np.zeros((2, 3))
        with pytest.raises(TooFewCorrespondencesError):
            lift_frame(pinhole_cam, kps, joints)

    def test_all_masked(self, pinhole_cam):
        kps = np.array([[-1.0, 240.0, 1.0], [320.0, 250.0, 0.0]])
        with pytest.raises(AllKeypointsMaskedError):
            lift_frame(pinhole_cam, kps, np.zeros((2, 3)))

    def test_behind_camera_flagged(self, pinhole_cam):
        # consistent scene, then flip one ray's joint far behind: lambda < 0 is
        # reported but not fatal
        rng = np.random.default_rng(43)
        t_gt, joints, kps = self._frame(pinhole_cam, rng)
        joints[5] = joints[5] - np.array([0.0, 0.0, 2000.0])
        out = lift_frame(pinhole_cam, kps, joints)
        assert out.behind_camera.any()
