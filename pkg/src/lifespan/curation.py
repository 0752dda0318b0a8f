"""Manifest curation: local image checks, photograph verification, and
precise death dates.

Checks run cheapest first and a sample stops at the first failing layer:

    1. local   file readable, image decodable, at least 200x200, contains
               color (mean per-pixel channel spread on a 64x64 downsample
               below the threshold counts as grayscale)
    2. vlm     a chat-completion endpoint is asked whether the image is a
               photograph of a real person; anything the parser cannot
               map to yes/no after one retry counts as unverified and the
               sample is excluded (conservative: no ambiguous inclusions)
    3. dates   records carrying a Wikidata entity id get their death date
               replaced by the day-precision claim value; a missing or
               too-coarse claim excludes the record

Every input record produces exactly one CurationDecision, in input order,
whatever happens to it. Curation never raises on a bad sample; failures
become reasons in the decision log. Network layers run with bounded
parallelism; local checks never touch the network.
"""

from __future__ import annotations

import base64
import datetime
import io
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import requests
from PIL import Image, UnidentifiedImageError

from .dataset import SampleRecord, with_death_date

REASONS = ("too_small", "grayscale", "not_photograph", "image_unavailable",
           "no_precise_death_date")

GRAYSCALE_SPREAD_THRESHOLD = 2.0  # 8-bit channel units
GRAYSCALE_SUBSAMPLE = 64

# Wikidata date precisions: 11 = day, 10 = month, 9 = year.
DAY_PRECISION = 11

VLM_PROMPT_VERSION = "v1"
DEFAULT_VLM_PROMPT = (
    "Does this image show a photograph of a real person? "
    "A painting, drawing, statue, cartoon or any other non-photographic "
    "depiction does not count. Answer with a single word: yes or no."
)

VLM_API_KEY_ENV = "LIFESPAN_VLM_API_KEY"

_NEGATIVE_WORDS = ("painting", "drawing", "illustration", "cartoon", "sketch",
                   "statue", "sculpture", "engraving", "render")


@dataclass(frozen=True)
class CurationCriteria:
    min_width: int = 200
    min_height: int = 200
    require_color: bool = True
    require_photograph: bool = True

    def __post_init__(self):
        if self.min_width < 1 or self.min_height < 1:
            raise ValueError("minimum dimensions must be positive")


@dataclass(frozen=True)
class CurationDecision:
    id: str
    accepted: bool
    reasons: tuple[str, ...]
    vlm_raw_response: str | None = None

    def __post_init__(self):
        if self.accepted != (len(self.reasons) == 0):
            raise ValueError("accepted must mean exactly: no rejection reasons")
        bad = [r for r in self.reasons if r not in REASONS]
        if bad:
            raise ValueError(f"unknown rejection reasons {bad}")

    def to_json_dict(self) -> dict:
        return {
            "id": self.id,
            "accepted": self.accepted,
            "reasons": list(self.reasons),
            "vlm_raw_response": self.vlm_raw_response,
        }


def check_image_local(data: bytes, criteria: CurationCriteria) -> list[str]:
    """Rejection reasons from the image bytes alone (no network)."""
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except (UnidentifiedImageError, OSError, ValueError):
        return ["image_unavailable"]

    reasons = []
    width, height = img.size
    if width < criteria.min_width or height < criteria.min_height:
        reasons.append("too_small")
    if criteria.require_color and _is_grayscale(img):
        reasons.append("grayscale")
    return reasons


def _is_grayscale(img: Image.Image) -> bool:
    small = img.convert("RGB").resize(
        (GRAYSCALE_SUBSAMPLE, GRAYSCALE_SUBSAMPLE), Image.Resampling.BILINEAR)
    arr = np.asarray(small, dtype=np.float64)
    spread = arr.max(axis=2) - arr.min(axis=2)
    return float(spread.mean()) < GRAYSCALE_SPREAD_THRESHOLD


@dataclass(frozen=True)
class VlmClientConfig:
    """Where and how to ask the photograph question.

    The endpoint is any chat-completion-compatible URL; the credential is
    read from the environment, never stored in config files. The prompt is
    versioned so audit logs can be tied to the exact wording used.
    """

    endpoint: str
    model: str = "gpt-4o-mini"
    prompt: str = DEFAULT_VLM_PROMPT
    prompt_version: str = VLM_PROMPT_VERSION
    timeout_seconds: float = 30.0
    max_retries: int = 1
    api_key_env: str = VLM_API_KEY_ENV


def parse_photograph_answer(text: str) -> str:
    """Map a model reply to photograph / not_photograph / unknown.

    The prompt asks for one word, so a leading yes/no settles it; replies
    that instead name a non-photographic medium ("this is a painting")
    count as no, and anything else is unknown.
    """
    words = [w.strip(".,!:;\"'()") for w in text.lower().split()]
    if not words:
        return "unknown"
    if words[0] == "yes":
        return "photograph"
    if words[0] == "no":
        return "not_photograph"
    if any(w in _NEGATIVE_WORDS for w in words):
        return "not_photograph"
    if "yes" in words:
        return "photograph"
    if "no" in words:
        return "not_photograph"
    if "photograph" in words or "photo" in words:
        return "photograph"
    return "unknown"


class VlmClient:
    """Asks a chat-completion endpoint whether an image is a photograph."""

    def __init__(self, config: VlmClientConfig, session: requests.Session | None = None):
        self.config = config
        self.session = session or requests.Session()

    def classify(self, image_bytes: bytes) -> tuple[str, str | None]:
        """(verdict, raw response text). Verdict is unknown after the
        configured retries are exhausted, never an exception."""
        last_raw = None
        for _ in range(self.config.max_retries + 1):
            try:
                raw = self._ask(image_bytes)
            except (requests.RequestException, ValueError, KeyError, IndexError, TypeError):
                continue
            last_raw = raw
            verdict = parse_photograph_answer(raw)
            if verdict != "unknown":
                return verdict, raw
        return "unknown", last_raw

    def _ask(self, image_bytes: bytes) -> str:
        payload = {
            "model": self.config.model,
            "temperature": 0,
            "max_tokens": 10,
            "messages": [{
                "role": "user",
                "content": [
                    {"type": "text", "text": self.config.prompt},
                    {"type": "image_url", "image_url": {
                        "url": "data:image/jpeg;base64,"
                               + base64.b64encode(image_bytes).decode("ascii"),
                    }},
                ],
            }],
        }
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.config.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        resp = self.session.post(self.config.endpoint, json=payload,
                                 headers=headers, timeout=self.config.timeout_seconds)
        resp.raise_for_status()
        content = resp.json()["choices"][0]["message"]["content"]
        if not isinstance(content, str):
            raise ValueError("response content is not text")
        return content


class WikidataLookupError(Exception):
    """The entity or an acceptable death-date claim could not be obtained."""


class WikidataClient:
    """Fetches death dates (claim P570) from the Wikidata entity API."""

    def __init__(self, base_url: str = "https://www.wikidata.org/wiki/Special:EntityData",
                 session: requests.Session | None = None,
                 timeout_seconds: float = 30.0,
                 min_precision: int = DAY_PRECISION):
        self.base_url = base_url.rstrip("/")
        self.session = session or requests.Session()
        self.timeout_seconds = timeout_seconds
        self.min_precision = min_precision

    def fetch_precise_death_date(self, entity_id: str) -> float:
        """Death date as a fractional year, from the most precise claim.

        Raises WikidataLookupError when the entity is missing, carries no
        death-date claim, or none of its claims reach the required
        precision.
        """
        try:
            resp = self.session.get(f"{self.base_url}/{entity_id}.json",
                                    timeout=self.timeout_seconds)
            resp.raise_for_status()
            entity = resp.json()["entities"][entity_id]
        except (requests.RequestException, ValueError, KeyError) as exc:
            raise WikidataLookupError(f"entity {entity_id} unavailable") from exc

        claims = entity.get("claims", {}).get("P570", [])
        best = None
        for claim in claims:
            value = claim.get("mainsnak", {}).get("datavalue", {}).get("value")
            if not isinstance(value, dict) or "time" not in value:
                continue
            precision = int(value.get("precision", 0))
            if best is None or precision > best[0]:
                best = (precision, value["time"])
        if best is None:
            raise WikidataLookupError(f"entity {entity_id} has no death-date claim")
        precision, time_str = best
        if precision < self.min_precision:
            raise WikidataLookupError(
                f"entity {entity_id} death date precision {precision} below "
                f"required {self.min_precision}")
        return _wikidata_time_to_fractional_year(time_str)


def _wikidata_time_to_fractional_year(time_str: str) -> float:
    """'+1999-06-30T00:00:00Z' -> 1999 + (day_of_year - 1)/365.25."""
    if not time_str.startswith("+"):
        raise WikidataLookupError(f"unsupported time value {time_str!r}")
    try:
        date = datetime.date.fromisoformat(time_str[1:11])
    except ValueError as exc:
        raise WikidataLookupError(f"unparseable time value {time_str!r}") from exc
    return date.year + (date.timetuple().tm_yday - 1) / 365.25


def _load_image_bytes(path: str) -> bytes | None:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError:
        return None


def curate(records: Sequence[SampleRecord], criteria: CurationCriteria,
           vlm_client: VlmClient | None = None,
           wikidata_client: WikidataClient | None = None,
           local_only: bool = False,
           parallelism: int = 8,
           ) -> tuple[list[SampleRecord], list[CurationDecision]]:
    """Filter records, returning (accepted records, one decision each).

    With local_only=True the network layers are skipped entirely; records
    passing the local checks are accepted as-is. Otherwise
    require_photograph needs a vlm_client, and records with a wikidata_id
    get their death date refreshed (and are excluded when no sufficiently
    precise date exists).
    """
    if parallelism < 1:
        raise ValueError("parallelism must be positive")
    if not local_only and criteria.require_photograph and vlm_client is None:
        raise ValueError("require_photograph needs a vlm_client (or local_only=True)")

    def examine(record: SampleRecord) -> tuple[CurationDecision, SampleRecord | None]:
        data = _load_image_bytes(record.image_path)
        if data is None:
            return CurationDecision(record.id, False, ("image_unavailable",)), None
        reasons = check_image_local(data, criteria)
        if reasons:
            return CurationDecision(record.id, False, tuple(reasons)), None

        raw_response = None
        if not local_only and criteria.require_photograph:
            verdict, raw_response = vlm_client.classify(data)
            if verdict != "photograph":
                # unknown means the answer could not be verified; excluded
                # under the same reason as a confirmed non-photograph
                return CurationDecision(record.id, False, ("not_photograph",),
                                        vlm_raw_response=raw_response), None

        final = record
        if not local_only and wikidata_client is not None and record.wikidata_id:
            try:
                death = wikidata_client.fetch_precise_death_date(record.wikidata_id)
                final = with_death_date(record, death)
            except WikidataLookupError:
                return CurationDecision(record.id, False, ("no_precise_death_date",),
                                        vlm_raw_response=raw_response), None
            if final.problems():
                return CurationDecision(record.id, False, ("no_precise_death_date",),
                                        vlm_raw_response=raw_response), None

        return CurationDecision(record.id, True, (), vlm_raw_response=raw_response), final

    if parallelism == 1 or local_only:
        results = [examine(r) for r in records]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(examine, records))

    decisions = [d for d, _ in results]
    accepted = [r for _, r in results if r is not None]
    return accepted, decisions


def write_audit_log(decisions: Sequence[CurationDecision], path: str) -> None:
    """One JSON object per decision, in input order."""
    with open(path, "w", encoding="utf-8") as fh:
        for decision in decisions:
            fh.write(json.dumps(decision.to_json_dict(), sort_keys=True))
            fh.write("\n")


def load_audit_log(path: str) -> list[CurationDecision]:
    decisions = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            decisions.append(CurationDecision(
                id=obj["id"], accepted=obj["accepted"],
                reasons=tuple(obj["reasons"]),
                vlm_raw_response=obj.get("vlm_raw_response")))
    return decisions
