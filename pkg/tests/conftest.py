from __future__ import annotations

from datetime import datetime, timezone

import pytest

from policylab.abac import SubjectAttrs, load_policy_set
from policylab.cleaning import CleaningEngine, DomainLexicon
from policylab.pipeline import SentimentLexicon, parse_sentiment_lexicon
from policylab.service import Workbench

ADMIN_TOKEN = "tok-admin"
ANALYST_TOKEN = "tok-analyst"
VIEWER_TOKEN = "tok-viewer"

TOKENS = {
    ADMIN_TOKEN: SubjectAttrs("ada", {"role": "admin"}),
    ANALYST_TOKEN: SubjectAttrs("ana", {"role": "analyst"}),
    VIEWER_TOKEN: SubjectAttrs("vic", {"role": "viewer"}),
}

ALLOW_ADMIN_EVERYTHING = """
[
  {"id": "admin-all", "effect": "permit", "action": "*",
   "subject": [{"attr": "role", "op": "eq", "value": "admin"}]},
  {"id": "analyst-run", "effect": "permit", "action": "run_policy",
   "subject": [{"attr": "role", "op": "eq", "value": "analyst"}]},
  {"id": "analyst-read", "effect": "permit", "action": "read_results",
   "subject": [{"attr": "role", "op": "eq", "value": "analyst"}]},
  {"id": "analyst-list", "effect": "permit", "action": "list",
   "subject": [{"attr": "role", "op": "eq", "value": "analyst"}]}
]
"""


def compliance_doc(**overrides) -> dict:
    doc = {
        "bias_measures": "sampling reviewed against census margins",
        "bias_statistics": [
            {"statement": "records from rural branches", "fraction": 0.18},
        ],
        "legal_constraints": "storage limited to the declared retention period",
        "tradeoffs": "aggressive outlier removal can hide rare events",
        "concept_notes": [],
    }
    doc.update(overrides)
    return doc


SENTIMENT_TSV = "\n".join([
    "#negator not",
    "#negator no",
    "#negator never",
    "good\t0.7",
    "great\t0.8",
    "bad\t-0.6",
    "awful\t-0.8",
    "fine\t0.3",
])


@pytest.fixture
def sentiment_lexicon() -> SentimentLexicon:
    return parse_sentiment_lexicon(SENTIMENT_TSV)


@pytest.fixture
def domain_lexicons() -> dict[str, DomainLexicon]:
    return {
        "winery": DomainLexicon("winery", frozenset(
            {"wine", "vineyard", "grape", "vintage", "cellar"})),
        "finance": DomainLexicon("finance", frozenset(
            {"loan", "credit", "bank", "mortgage", "interest"})),
        "healthcare": DomainLexicon("healthcare", frozenset(
            {"patient", "dose", "clinic", "nurse", "vaccine"})),
    }


def fixed_clock(stamp: str = "2024-05-01T12:00:00+00:00"):
    moment = datetime.fromisoformat(stamp).astimezone(timezone.utc)
    return lambda: moment


def make_workbench(tmp_path, policy_text: str = ALLOW_ADMIN_EVERYTHING,
                   tokens=None, cleaning: CleaningEngine | None = None,
                   sentiment: SentimentLexicon | None = None,
                   clock=None, **kwargs) -> Workbench:
    return Workbench(
        state_dir=tmp_path / "state",
        tokens=tokens if tokens is not None else TOKENS,
        policy_rules=load_policy_set(policy_text),
        cleaning=cleaning,
        sentiment=sentiment or parse_sentiment_lexicon(SENTIMENT_TSV),
        clock=clock or fixed_clock(),
        **kwargs,
    )


@pytest.fixture
def workbench(tmp_path) -> Workbench:
    wb = make_workbench(tmp_path)
    yield wb
    wb.close()
