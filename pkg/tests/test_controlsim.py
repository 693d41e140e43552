from pathlib import Path

import numpy as np
import pytest

from conftest import random_policy
from prunecert.certifier import StateSpaceSpec, multi_layer_budget
from prunecert.controlsim import (
    BlowUpError,
    DoubleIntegrator,
    LinearSystem,
    Pendulum,
    Trajectory,
    deviation_audit,
    rollout,
    step,
)
from prunecert.policy import ActivationKind, Layer, MlpPolicy, load_policy
from prunecert.pruner import PrunePlan, apply_plan, collect_calibration, rank_weights

FIXTURES = Path(__file__).parent / "fixtures"


def _zero_policy(state_dim, action_dim):
    return MlpPolicy(
        layers=(
            Layer(
                weight=np.zeros((action_dim, state_dim)),
                bias=np.zeros(action_dim),
                activation=ActivationKind("relu"),
            ),
        )
    )


class TestStep:
    def test_identity_linear_system(self):
        d = LinearSystem(a=np.eye(2), b=np.zeros((2, 1)))
        x = np.array([0.3, -0.7])
        np.testing.assert_array_equal(step(d, x, [5.0]), x)

    def test_double_integrator_euler_kinematics(self):
        d = DoubleIntegrator(dt=0.1)
        np.testing.assert_allclose(step(d, [0.0, 1.0], [0.0]), [0.1, 1.0], atol=1e-15)

    def test_pendulum_equilibrium(self):
        d = Pendulum()
        np.testing.assert_array_equal(step(d, [0.0, 0.0], [0.0]), [0.0, 0.0])

    def test_double_integrator_equilibrium(self):
        d = DoubleIntegrator()
        np.testing.assert_array_equal(step(d, [0.0, 0.0], [0.0]), [0.0, 0.0])

    def test_action_clipped_before_integration(self):
        d = DoubleIntegrator(dt=0.1, accel_limit=1.0)
        np.testing.assert_allclose(step(d, [0.0, 0.0], [100.0]), [0.0, 0.1], atol=1e-15)

    def test_state_clipped_to_box(self):
        d = DoubleIntegrator(dt=0.1, state_box=(np.array([-1.0, -0.5]), np.array([1.0, 0.5])))
        nxt = step(d, [0.95, 0.4], [50.0])
        assert nxt[1] == 0.5

    def test_blow_up_detected(self):
        d = LinearSystem(a=np.eye(1) * 1e308, b=np.eye(1))
        with pytest.raises(BlowUpError):
            step(d, [1e100], [0.0])

    def test_dim_checks(self):
        d = Pendulum()
        with pytest.raises(ValueError):
            step(d, [1.0], [0.0])
        with pytest.raises(ValueError):
            step(d, [0.0, 0.0], [0.0, 0.0])


class TestRollout:
    def test_zero_policy_constant_trajectory(self):
        d = LinearSystem(a=np.eye(2), b=np.zeros((2, 1)))
        p = _zero_policy(2, 1)
        traj = rollout(d, p, [0.4, -0.2], 25)
        assert traj.horizon == 25
        for s in traj.states:
            np.testing.assert_array_equal(s, [0.4, -0.2])

    def test_single_step_consistent_with_step(self):
        d = DoubleIntegrator(dt=0.1)
        p = _zero_policy(2, 1)
        traj = rollout(d, p, [1.0, 2.0], 1)
        np.testing.assert_array_equal(traj.states[1], step(d, [1.0, 2.0], [0.0]))

    def test_horizon_must_be_positive(self):
        with pytest.raises(ValueError):
            rollout(DoubleIntegrator(), _zero_policy(2, 1), [0.0, 0.0], 0)

    def test_deterministic_bitwise(self):
        rng = np.random.default_rng(0)
        p = random_policy(rng, dims=[2, 6, 1])
        d = Pendulum(torque_limit=3.0)
        a = rollout(d, p, [0.2, 0.1], 50)
        b = rollout(d, p, [0.2, 0.1], 50)
        for sa, sb in zip(a.states, b.states):
            np.testing.assert_array_equal(sa, sb)

    def test_pendulum_fixture_stabilizes(self):
        p = load_policy(FIXTURES / "pendulum_policy.json")
        d = Pendulum(torque_limit=5.0)
        traj = rollout(d, p, [0.5, 0.0], 500)
        assert np.linalg.norm(traj.states[-1]) < np.linalg.norm(traj.states[0])

    def test_double_integrator_fixture_stabilizes(self):
        p = load_policy(FIXTURES / "double_integrator_policy.json")
        d = DoubleIntegrator()
        traj = rollout(d, p, [1.0, 0.0], 500)
        assert np.linalg.norm(traj.states[-1]) < 1e-6

    def test_blow_up_carries_step_index_and_partial(self):
        d = LinearSystem(a=np.eye(1) * 1e200, b=np.zeros((1, 1)))
        p = _zero_policy(1, 1)
        with pytest.raises(BlowUpError) as err:
            rollout(d, p, [1.0], 10)
        assert err.value.t == 1  # 1e200 -> 1e400 overflows on the second step
        assert err.value.partial is not None
        assert len(err.value.partial.states) == err.value.t + 1

    def test_x0_outside_box_rejected(self):
        d = DoubleIntegrator(state_box=(np.array([-1.0, -1.0]), np.array([1.0, 1.0])))
        with pytest.raises(ValueError):
            rollout(d, _zero_policy(2, 1), [2.0, 0.0], 5)


class TestTrajectory:
    def test_length_invariant(self):
        with pytest.raises(ValueError):
            Trajectory(states=(np.zeros(2),), actions=(np.zeros(1),))


def _pruned_pair(seed=1):
    rng = np.random.default_rng(seed)
    p = load_policy(FIXTURES / "pendulum_policy.json")
    states = [rng.uniform(-1.0, 1.0, size=2) for _ in range(16)]
    calib = collect_calibration(p, states)
    entries = rank_weights(p, calib, [0], damping="auto")
    pruned, plan = apply_plan(p, entries, 2)  # 50% of layer 0
    return p, pruned, plan


class TestDeviationAudit:
    def _cert(self, p, plan, radius=3.0):
        return multi_layer_budget(p, plan, StateSpaceSpec(dim=2, radius=radius))

    def test_identical_policies_zero_deviation(self):
        p, _, _ = _pruned_pair()
        cert = self._cert(p, PrunePlan(layers=()))
        d = Pendulum(torque_limit=5.0)
        report = deviation_audit(d, p, p, cert, [0.5, 0.0], 50)
        assert report.max_in_ball_deviation == 0.0
        assert report.in_ball_violations == 0
        assert report.max_divergence == 0.0

    def test_certified_pair_no_in_ball_violations(self):
        p, pruned, plan = _pruned_pair()
        cert = self._cert(p, plan)
        d = Pendulum(
            torque_limit=5.0,
            state_box=(np.array([-np.pi, -8.0]), np.array([np.pi, 8.0])),
        )
        report = deviation_audit(d, p, pruned, cert, [0.5, 0.0], 500)
        assert report.in_ball_count > 0
        assert report.in_ball_violations == 0

    def test_bounds_scale_exactly_with_doubled_plan(self):
        p, pruned, plan = _pruned_pair()
        cert = self._cert(p, plan)
        cert2 = self._cert(p, plan.scaled(2.0))
        d = Pendulum(torque_limit=5.0)
        a = deviation_audit(d, p, pruned, cert, [0.3, 0.0], 40)
        b = deviation_audit(d, p, pruned, cert2, [0.3, 0.0], 40)
        for ra, rb in zip(a.rows, b.rows):
            assert rb.bound == 2.0 * ra.bound

    def test_rows_cover_both_trajectories(self):
        p, pruned, plan = _pruned_pair()
        cert = self._cert(p, plan)
        d = Pendulum(torque_limit=5.0)
        report = deviation_audit(d, p, pruned, cert, [0.5, 0.0], 30)
        labels = {r.trajectory for r in report.rows}
        assert labels == {"original", "pruned"}
        assert len(report.rows) == 2 * 31
        assert len(report.divergence) == 31

    def test_out_of_ball_states_flagged_not_counted(self):
        p, pruned, plan = _pruned_pair()
        cert = self._cert(p, plan, radius=0.1)  # tiny certified ball
        d = Pendulum(torque_limit=5.0)
        report = deviation_audit(d, p, pruned, cert, [0.5, 0.0], 30)
        assert report.out_of_ball_count > 0
        for r in report.rows:
            if not r.in_ball:
                assert np.linalg.norm(r.state) > cert.radius

    @pytest.mark.filterwarnings("ignore:overflow")
    def test_blow_up_recorded_with_partial_rows(self):
        explode = MlpPolicy(
            layers=(
                Layer(weight=[[1e160, 0.0]], bias=[0.0], activation=ActivationKind("identity")),
            )
        )
        calm = _zero_policy(2, 1)
        d = DoubleIntegrator(dt=1e160)
        cert = multi_layer_budget(
            calm, PrunePlan(layers=()), StateSpaceSpec(dim=2, radius=1.0)
        )
        report = deviation_audit(d, calm, explode, cert, [0.5, 0.0], 10)
        assert report.blowup is not None
        assert report.blowup[0] == "pruned"
