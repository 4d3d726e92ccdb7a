import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from nsad.dsl import parse_ruleset  # noqa: E402
from nsad.params import ParameterStore  # noqa: E402
from nsad import reasoner  # noqa: E402

AGE_RULE = (
    "rule age_risk { when present(age) effect sigmoid(age; alpha, T1, tau) + ramp(age; beta, T2) "
    "params { alpha=0.8 beta=0.05 T1=70 in [50,90] T2=85 in [70,100] tau=5 in [0.1,20] } }"
)
AGE_SCHEMA = {"age": "numeric", "smoker": "categorical", "sex": "categorical", "bmi": "numeric"}


def store_for(rs, w=1.0, freeze_w=False):
    store = ParameterStore()
    reasoner.register_rule_params(store, rs)
    reasoner.register_balance(store, init=w, frozen=freeze_w)
    return store


@pytest.fixture
def age_rules():
    return parse_ruleset(AGE_RULE, AGE_SCHEMA)


@pytest.fixture
def age_store(age_rules):
    return store_for(age_rules)
