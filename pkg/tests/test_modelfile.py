import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from supermarket_mf import modelfile
from supermarket_mf.core import birth_death, ChoiceDecomposition
from supermarket_mf.errors import ModelFileError
from supermarket_mf.gim1 import BatchPhService, Gim1Model
from supermarket_mf.mg1 import BmapDescriptor, Mg1Model
from supermarket_mf.multichoice import MobileServerModel, MultiClassModel

rate = st.floats(0.01, 100.0, allow_nan=False, allow_infinity=False)


def same_model(a, b):
    da, db = modelfile.model_to_dict(a), modelfile.model_to_dict(b)
    # exact comparison: floats must survive with 0 ulp
    return json.dumps(da, sort_keys=True) == json.dumps(db, sort_keys=True) and da == db


@given(rate, rate, st.integers(1, 5))
def test_round_trip_mg1(a, mu, d):
    C = [[-a - 0.3, 0.3], [0.1, -0.1 - a / 3]]
    D = ([[a, 0.0], [0.0, a / 3]],)
    mf = modelfile.ModelFile("mg1", Mg1Model(BmapDescriptor(C, D), mu, d), {"K": 12}, {"n": 10})
    back = modelfile.loads(modelfile.dumps(mf))
    assert same_model(mf.model, back.model) and back.solver == {"K": 12} and back.sim == {"n": 10}
    assert np.array_equal(back.model.bmap.C, mf.model.bmap.C)


@given(rate, st.floats(0.01, 0.99), st.integers(1, 5))
def test_round_trip_gim1(lam, w, d):
    svc = BatchPhService([w, 1 - w], [[-4.0, 3.0], [2.0, -7.0]], [w, 1 - w])
    mf = modelfile.ModelFile("gim1", Gim1Model(lam, svc, d))
    back = modelfile.loads(modelfile.dumps(mf))
    assert same_model(mf.model, back.model)
    assert back.model.lam == lam and back.model.service.alpha[0] == w


@given(rate, rate, st.integers(1, 4), st.integers(1, 4))
def test_round_trip_mobile(lam, mu, d, f):
    mf = modelfile.ModelFile("mobile", MobileServerModel(lam, mu, d, f), initial="fixed_point")
    back = modelfile.loads(modelfile.dumps(mf))
    assert back.model == mf.model and back.initial == "fixed_point"


@given(st.lists(st.tuples(rate, st.integers(1, 4)), min_size=1, max_size=4), rate)
def test_round_trip_multiclass(classes, mu):
    mf = modelfile.ModelFile("multiclass", MultiClassModel(tuple(classes), mu))
    assert modelfile.loads(modelfile.dumps(mf)).model == mf.model


def test_round_trip_general():
    left, right = birth_death(0.3, 1.1, 4)
    dec = ChoiceDecomposition(left + right, ((1, left),), ((2, right),))
    back = modelfile.loads(modelfile.dumps(modelfile.ModelFile("general", dec))).model
    assert back.choice_numbers == (1, 2)
    assert np.array_equal(back.generator.dense, dec.generator.dense)
    assert back.right_parts[0][1].open_levels == {4}


def test_example_files_parse():
    from pathlib import Path

    files = sorted((Path(__file__).resolve().parents[1] / "models").glob("*.json"))
    assert files
    for path in files:
        if path.name == "unstable.json":
            continue
        modelfile.load(path)


@pytest.mark.parametrize("text, where", [
    ('{"model_type": "mg1", "C": [[-1]]}', "required"),
    ('{"model_type": "queue"}', "model_type"),
    ('{"model_type": "mobile", "lambda": -1, "mu": 1, "d": 1, "f": 1}', "lambda"),
    ('{"model_type": "mobile", "lambda": 1, "mu": 1, "d": 1.5, "f": 1}', "d"),
    ('{"model_type": "mobile", "lambda": 1, "mu": 1, "d": 1, "f": 1, "sim": {"horizon": 5, "oops": 1}}', "sim"),
])
def test_schema_errors(text, where):
    with pytest.raises(ModelFileError) as info:
        modelfile.loads(text)
    assert "schema error" in str(info.value)


def test_non_finite_rejected():
    with pytest.raises(ModelFileError):
        modelfile.loads('{"model_type": "mobile", "lambda": NaN, "mu": 1, "d": 1, "f": 1}')
    with pytest.raises(ModelFileError):
        modelfile.loads('{"model_type": "mg1", "C": [[-Infinity]], "D": [[[1]]], "mu": 1, "d": 2}')


def test_invalid_matrices_rejected():
    with pytest.raises(ModelFileError, match="invalid mg1"):
        modelfile.loads('{"model_type": "mg1", "C": [[-1]], "D": [[[0.5]]], "mu": 1, "d": 2}')


def test_bad_json():
    with pytest.raises(ModelFileError, match="not valid JSON"):
        modelfile.loads("{model_type: mg1")


def test_initial_measure():
    mf = modelfile.loads('{"model_type": "mobile", "lambda": 0.5, "mu": 1, "d": 2, "f": 1,'
                         ' "initial": [[1.0], [0.5], [0.2]]}')
    S = modelfile.initial_measure(mf, (1,) * 6)
    assert S.aggregate().tolist() == [1.0, 0.5, 0.2, 0.0, 0.0, 0.0]
    mg1 = modelfile.loads('{"model_type": "mg1", "C": [[-3, 1], [1, -2]], "D": [[[2, 0], [0, 1]]], "mu": 4, "d": 2}')
    S = modelfile.initial_measure(mg1, (2, 2, 2))
    np.testing.assert_allclose(S.levels[0], mg1.model.gamma)
    with pytest.raises(ModelFileError):
        modelfile.initial_measure(mf, (2, 2))
