import math

import numpy as np
import pytest

from qjump.core import (
    CavityParams,
    CoherentAmplitude,
    DriveMode,
    ParameterIssues,
    Picture,
    PictureError,
    RandomStream,
    to_interaction,
    to_schrodinger,
    validate,
)


class TestValidate:
    """Tests for validate and CavityParams.checked"""

    @pytest.mark.parametrize(
        "params",
        [
            CavityParams(),
            CavityParams.laser(),
            CavityParams.feedback(),
            CavityParams.feedback(beta=1 + 1j, eta=1.0),
            CavityParams.feedback(eta=0.0),
        ],
    )
    def test_valid(self, params):
        issues = validate(params)
        assert not issues
        assert str(issues) == "No parameter issues found"
        assert params.checked() is params

    @pytest.mark.parametrize(
        "kwargs, fields",
        [
            ({"eta": 1.5}, ["eta"]),
            ({"eta": -0.1}, ["eta"]),
            ({"kappa": 0.0}, ["kappa"]),
            ({"kappa": -1.0, "eta": 2.0}, ["kappa", "eta"]),
            ({"omega": -1.0}, ["omega"]),
            ({"omega": True}, ["omega"]),
            ({"kappa": math.inf}, ["kappa"]),
            ({"beta": complex(math.nan, 0.0)}, ["beta"]),
            ({"beta": "two"}, ["beta"]),
            ({"mode": "pulsed"}, ["mode"]),
        ],
    )
    def test_invalid_fields_reported(self, kwargs, fields):
        # Arrange
        params = CavityParams(**kwargs)

        # Act
        issues = validate(params)

        # Assert
        assert issues.fields == fields
        with pytest.raises(ParameterIssues):
            params.checked()

    def test_issue_message(self):
        issues = validate(CavityParams(eta=1.5))
        assert "eta" in str(issues)
        assert "0 <= eta <= 1" in str(issues)

    def test_issues_accumulate(self):
        issues = validate(CavityParams(eta=2.0))
        issues += validate(CavityParams(kappa=0.0))
        assert len(issues) == 2
        assert issues[1].field == "kappa"


class TestConstructors:
    def test_laser_defaults(self):
        params = CavityParams.laser()
        assert params.mode is DriveMode.LASER_DRIVEN
        assert params.omega == 8.0
        assert not params.is_feedback

    def test_feedback_defaults(self):
        params = CavityParams.feedback()
        assert params.mode is DriveMode.FEEDBACK
        assert params.beta == 2.0
        assert params.eta == 0.5
        assert params.is_feedback


class TestPictures:
    """Tests for to_schrodinger and to_interaction"""

    def test_quarter_turn(self):
        # omega_cav t = pi/2 rotates alpha = 1 onto -i
        params = CavityParams(omega_cav=4.0)
        alpha_s = to_schrodinger(CoherentAmplitude(1.0), math.pi / 8, params)
        assert alpha_s.picture is Picture.SCHRODINGER
        assert alpha_s.value == pytest.approx(-1j, abs=1e-15)

    def test_identity_at_zero(self):
        alpha = CoherentAmplitude(2 - 1j)
        assert to_schrodinger(alpha, 0.0, CavityParams()).value == 2 - 1j

    @pytest.mark.parametrize("t", [0.0, 0.3, 2.7, 10.0])
    def test_round_trip(self, t):
        params = CavityParams(omega_cav=4.0)
        alpha = CoherentAmplitude(1.5 + 0.5j)
        back = to_interaction(to_schrodinger(alpha, t, params), t, params)
        assert back.picture is Picture.INTERACTION
        assert abs(back.value - alpha.value) < 1e-12

    def test_magnitude_preserved(self):
        alpha = CoherentAmplitude(3 + 4j)
        assert abs(to_schrodinger(alpha, 1.234, CavityParams())) == pytest.approx(5.0)

    def test_wrong_picture(self):
        alpha = CoherentAmplitude(1.0, Picture.SCHRODINGER)
        with pytest.raises(PictureError, match="interaction-picture"):
            to_schrodinger(alpha, 1.0, CavityParams())
        with pytest.raises(PictureError):
            to_interaction(CoherentAmplitude(1.0), 1.0, CavityParams())


class TestRandomStream:
    def test_replay(self):
        a = RandomStream(42, 7).uniforms(100)
        b = RandomStream(42, 7).uniforms(100)
        np.testing.assert_array_equal(a, b)

    def test_prefix(self):
        stream = RandomStream(3, 1)
        np.testing.assert_array_equal(stream.uniforms(5), stream.uniforms(10)[:5])

    @pytest.mark.parametrize("other", [(42, 8), (43, 7)])
    def test_distinct_streams(self, other):
        a = RandomStream(42, 7).uniforms(100)
        b = RandomStream(*other).uniforms(100)
        assert not np.array_equal(a, b)

    def test_range(self):
        u = RandomStream(0, 0).uniforms(10_000)
        assert u.min() >= 0.0
        assert u.max() < 1.0


if __name__ == "__main__":
    pytest.main(["-v", "-s", __file__])
