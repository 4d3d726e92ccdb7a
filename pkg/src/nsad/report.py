"""Per-patient explanatory diagnosis reports."""

from __future__ import annotations

import json
import logging
import os
import threading
import urllib.error
import urllib.request
from dataclasses import dataclass, field, replace
from typing import Optional

from nsad.dsl.nodes import RuleSet
from nsad.perception import softmax
from nsad.reasoner import Adjustment
from nsad.records import CLASS_NAMES, LogitPair

ENDPOINT_ENV = "NSAD_LLM_ENDPOINT"
KEY_ENV = "NSAD_LLM_KEY"
DEFAULT_TIMEOUT = 30.0
OVERRIDE = "symbolic override of perception"

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RuleContribution:
    id: str
    description: str
    delta: float
    influence: str  # "toward AD" | "toward CN" | "none"


@dataclass(frozen=True)
class DiagnosisReport:
    patient_id: str
    input_logits: LogitPair
    contributions: tuple
    delta_total: float
    w: float
    adjusted_logits: LogitPair
    probabilities: tuple  # (p_cn, p_ad)
    decision: str
    perception_decision: str
    flags: tuple = ()
    prose: Optional[str] = None
    notices: tuple = field(default=())

    @property
    def overridden(self) -> bool:
        return self.decision != self.perception_decision

    def to_dict(self) -> dict:
        return {
            "patient_id": self.patient_id,
            "input_logits": {"cn": self.input_logits.cn, "ad": self.input_logits.ad},
            "active_rules": [
                {"id": c.id, "description": c.description, "delta": c.delta, "influence": c.influence}
                for c in self.contributions
            ],
            "delta_total": self.delta_total,
            "w": self.w,
            "adjusted_logits": {"cn": self.adjusted_logits.cn, "ad": self.adjusted_logits.ad},
            "probabilities": {"cn": self.probabilities[0], "ad": self.probabilities[1]},
            "decision": self.decision,
            "perception_decision": self.perception_decision,
            "flags": list(self.flags),
            "prose": self.prose,
            "notices": list(self.notices),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def _decide(y: LogitPair) -> str:
    return CLASS_NAMES[1] if y.ad > y.cn else CLASS_NAMES[0]


def _influence(d: float) -> str:
    if d > 0:
        return "toward AD"
    if d < 0:
        return "toward CN"
    return "none"


def build_report(adj: Adjustment, ruleset: RuleSet, record) -> DiagnosisReport:
    described = {r.id: r.description for r in ruleset.rules}
    contributions = sorted(
        (RuleContribution(rid, described.get(rid, ""), d, _influence(d)) for rid, d in adj.active),
        key=lambda c: (-abs(c.delta), c.id),
    )
    decision = _decide(adj.output_logits)
    before = _decide(adj.input_logits)
    flags = (OVERRIDE,) if decision != before else ()
    return DiagnosisReport(
        patient_id=getattr(record, "id", str(record)),
        input_logits=adj.input_logits,
        contributions=tuple(contributions),
        delta_total=adj.delta_total,
        w=adj.w,
        adjusted_logits=adj.output_logits,
        probabilities=softmax(adj.output_logits),
        decision=decision,
        perception_decision=before,
        flags=flags,
    )


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


def _f(x: float) -> str:
    return f"{x:.4f}"


def render_template(r: DiagnosisReport) -> str:
    lines = [
        f"Diagnostic report for patient {r.patient_id}",
        "",
        f"Perception logits: CN {_f(r.input_logits.cn)}, AD {_f(r.input_logits.ad)} "
        f"(perception alone: {r.perception_decision})",
    ]
    if not r.contributions:
        lines.append("No rule applied to this patient; no symbolic adjustments applied.")
        lines.append("The decision follows perception unchanged.")
    else:
        lines.append(f"Active rules ({len(r.contributions)}), strongest first:")
        width = max(len(c.id) for c in r.contributions)
        for c in r.contributions:
            desc = f"  {c.description}" if c.description else ""
            lines.append(f"  {c.id.ljust(width)}  {c.delta:+.4f}  {c.influence}{desc}")
        lines.append(f"Total adjustment: {r.delta_total:+.4f} (balance factor w = {_f(r.w)})")
    lines.append(f"Adjusted logits: CN {_f(r.adjusted_logits.cn)}, AD {_f(r.adjusted_logits.ad)}")
    lines.append(f"Probabilities: CN {_f(r.probabilities[0])}, AD {_f(r.probabilities[1])}")
    verdict = f"Decision: {r.decision}"
    if r.overridden:
        verdict += f" ({OVERRIDE}: {r.perception_decision} -> {r.decision})"
    lines.append(verdict)
    for note in r.notices:
        lines.append(f"Note: {note}")
    return "\n".join(lines) + "\n"


class ProseClient:
    """Minimal client for an external text-generation endpoint.

    Sends the structured report as JSON (``{"prompt": ..., "report": ...}``)
    and accepts either a JSON object with a ``text`` field or a plain-text
    body. A semaphore caps concurrent requests to the endpoint.
    """

    def __init__(self, endpoint: str, key: Optional[str] = None,
                 timeout: float = DEFAULT_TIMEOUT, max_concurrent: int = 4):
        self.endpoint = endpoint
        self.key = key
        self.timeout = timeout
        self._slots = threading.BoundedSemaphore(max_concurrent)

    @classmethod
    def from_env(cls, timeout: float = DEFAULT_TIMEOUT) -> Optional["ProseClient"]:
        endpoint = os.environ.get(ENDPOINT_ENV)
        if not endpoint:
            return None
        return cls(endpoint, os.environ.get(KEY_ENV), timeout)

    def prompt(self, r: DiagnosisReport) -> str:
        return (
            "Write a short explanatory diagnostic report for a clinician. "
            "Explain the perception result, each listed rule contribution and the final decision. "
            "Do not change any number.\n\n" + render_template(r)
        )

    def generate(self, r: DiagnosisReport) -> str:
        body = json.dumps({"prompt": self.prompt(r), "report": r.to_dict()}).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self.key:
            headers["Authorization"] = f"Bearer {self.key}"
        req = urllib.request.Request(self.endpoint, data=body, headers=headers, method="POST")
        with self._slots:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                raw = resp.read().decode("utf-8")
        try:
            doc = json.loads(raw)
        except json.JSONDecodeError:
            return raw.strip()
        if isinstance(doc, dict) and isinstance(doc.get("text"), str):
            return doc["text"].strip()
        raise ValueError("endpoint reply has no 'text' field")


def render_text(r: DiagnosisReport, style: str = "template", client: Optional[ProseClient] = None) -> str:
    return render(r, style, client)[0]


def render(r: DiagnosisReport, style: str = "template", client: Optional[ProseClient] = None):
    """Render a report; returns ``(text, report)``.

    The external style embeds prose from ``client`` (or one configured from the
    environment). Any failure falls back to the template with a notice; only
    the ``prose``/``notices`` fields of the returned report can differ.
    """
    if style == "template":
        return render_template(r), r
    if style != "external":
        raise ValueError(f"unknown render style {style!r}")
    client = client or ProseClient.from_env()
    if client is None:
        notice = f"external prose unavailable: {ENDPOINT_ENV} is not set; template output used"
        log.warning(notice)
        r = replace(r, notices=r.notices + (notice,))
        return render_template(r), r
    try:
        prose = client.generate(r)
    except (OSError, urllib.error.URLError, ValueError, TimeoutError) as exc:
        notice = f"external prose unavailable ({exc.__class__.__name__}: {exc}); template output used"
        log.warning(notice)
        r = replace(r, notices=r.notices + (notice,))
        return render_template(r), r
    r = replace(r, prose=prose)
    return render_template(r) + "\n" + prose + "\n", r
