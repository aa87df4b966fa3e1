import pytest

from resonate.errors import (
    CFLViolation,
    ConfigError,
    GradingError,
    MissingArtifactError,
    NumericalGuardError,
    ResonanceNotFound,
    ResonateError,
    SolverError,
)


@pytest.mark.parametrize(
    "error, code",
    [
        (ConfigError("bad"), 2),
        (ResonanceNotFound("none"), 3),
        (CFLViolation("dt"), 3),
        (MissingArtifactError("gone"), 4),
    ],
)
def test_exit_codes(error, code):
    assert error.exit_code == code
    assert isinstance(error, ResonateError)


def test_error_document():
    err = SolverError("singular", pivot=1e-18)
    data = err.to_dict()
    assert data == {
        "error": "SolverError",
        "message": "singular",
        "exit_code": 3,
        "details": {"pivot": 1e-18},
    }


def test_grading_error_names_the_region():
    err = GradingError("too flat", "neck")
    assert isinstance(err, NumericalGuardError)
    assert err.region == "neck"
    assert err.details["region"] == "neck"


def test_config_error_is_a_value_error():
    with pytest.raises(ValueError):
        raise ConfigError("bad key")
