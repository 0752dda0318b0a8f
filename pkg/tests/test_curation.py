import io
import json

import numpy as np
import pytest
import requests
from PIL import Image

from lifespan.curation import (DEFAULT_VLM_PROMPT, VLM_API_KEY_ENV,
                               CurationCriteria, CurationDecision, VlmClient,
                               VlmClientConfig, WikidataClient,
                               WikidataLookupError, check_image_local, curate,
                               load_audit_log, parse_photograph_answer,
                               write_audit_log)
from lifespan.dataset import SampleRecord


def png_bytes(img):
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def color_image(width=256, height=256, tint=0):
    arr = np.zeros((height, width, 3), dtype=np.uint8)
    arr[..., 0] = np.linspace(0, 255, width, dtype=np.uint8)[None, :]
    arr[..., 2] = 255 - arr[..., 0]
    arr[..., 1] = tint % 256
    return png_bytes(Image.fromarray(arr))


def gray_image(width=256, height=256):
    arr = np.linspace(0, 255, width, dtype=np.uint8)[None, :].repeat(height, axis=0)
    return png_bytes(Image.fromarray(arr, mode="L"))


CRITERIA = CurationCriteria()


class TestLocalChecks:
    def test_good_color_image_passes(self):
        assert check_image_local(color_image(), CRITERIA) == []

    def test_too_small(self):
        assert check_image_local(color_image(50, 50), CRITERIA) == ["too_small"]

    def test_narrow_image_is_too_small(self):
        assert "too_small" in check_image_local(color_image(150, 400), CRITERIA)

    def test_grayscale(self):
        assert check_image_local(gray_image(), CRITERIA) == ["grayscale"]

    def test_equal_channel_rgb_counts_as_grayscale(self):
        arr = np.full((256, 256, 3), 77, dtype=np.uint8)
        assert check_image_local(png_bytes(Image.fromarray(arr)), CRITERIA) == ["grayscale"]

    def test_small_and_gray_reports_both(self):
        assert check_image_local(gray_image(50, 50), CRITERIA) == \
            ["too_small", "grayscale"]

    def test_undecodable_bytes(self):
        assert check_image_local(b"not an image at all", CRITERIA) == \
            ["image_unavailable"]

    def test_color_not_required(self):
        relaxed = CurationCriteria(require_color=False)
        assert check_image_local(gray_image(), relaxed) == []

    def test_custom_minimum(self):
        strict = CurationCriteria(min_width=500, min_height=500)
        assert check_image_local(color_image(), strict) == ["too_small"]


class TestAnswerParsing:
    @pytest.mark.parametrize("text,verdict", [
        ("yes", "photograph"),
        ("Yes.", "photograph"),
        ("YES", "photograph"),
        ("no", "not_photograph"),
        ("No,", "not_photograph"),
        ("This is a painting", "not_photograph"),
        ("a pencil drawing of a man", "not_photograph"),
        ("I think yes", "photograph"),
        ("clearly a photograph", "photograph"),
        ("maybe", "unknown"),
        ("", "unknown"),
        ("   ", "unknown"),
    ])
    def test_cases(self, text, verdict):
        assert parse_photograph_answer(text) == verdict


class FakeResponse:
    def __init__(self, payload=None, status=200):
        self._payload = payload
        self.status_code = status

    def raise_for_status(self):
        if self.status_code >= 400:
            raise requests.HTTPError(f"status {self.status_code}")

    def json(self):
        return self._payload


class FakeSession:
    """Canned replies in order; an Exception entry raises, a string becomes
    a chat-completion reply, a FakeResponse passes through."""

    def __init__(self, replies):
        self.replies = list(replies)
        self.calls = []

    def _next(self):
        reply = self.replies.pop(0)
        if isinstance(reply, Exception):
            raise reply
        if isinstance(reply, FakeResponse):
            return reply
        return FakeResponse({"choices": [{"message": {"content": reply}}]})

    def post(self, url, json=None, headers=None, timeout=None):
        self.calls.append({"url": url, "json": json, "headers": headers})
        return self._next()

    def get(self, url, timeout=None):
        self.calls.append({"url": url})
        return self._next()


def vlm(replies, **config):
    session = FakeSession(replies)
    client = VlmClient(VlmClientConfig(endpoint="http://vlm.test/v1", **config),
                       session=session)
    return client, session


class TestVlmClient:
    def test_yes_answer(self):
        client, session = vlm(["yes"])
        assert client.classify(b"img") == ("photograph", "yes")
        assert len(session.calls) == 1

    def test_payload_shape(self, monkeypatch):
        monkeypatch.delenv(VLM_API_KEY_ENV, raising=False)
        client, session = vlm(["yes"])
        client.classify(b"img")
        payload = session.calls[0]["json"]
        assert payload["temperature"] == 0
        assert payload["messages"][0]["content"][0]["text"] == DEFAULT_VLM_PROMPT
        url = payload["messages"][0]["content"][1]["image_url"]["url"]
        assert url.startswith("data:image/jpeg;base64,")
        assert "Authorization" not in session.calls[0]["headers"]

    def test_api_key_from_environment(self, monkeypatch):
        monkeypatch.setenv(VLM_API_KEY_ENV, "sk-test-123")
        client, session = vlm(["yes"])
        client.classify(b"img")
        assert session.calls[0]["headers"]["Authorization"] == "Bearer sk-test-123"

    def test_retry_after_connection_error(self):
        client, session = vlm([requests.ConnectionError("boom"), "no"])
        assert client.classify(b"img") == ("not_photograph", "no")
        assert len(session.calls) == 2

    def test_retry_after_http_error(self):
        client, session = vlm([FakeResponse(status=500), "yes"])
        assert client.classify(b"img") == ("photograph", "yes")

    def test_retry_after_unparseable_answer(self):
        client, _ = vlm(["hmm", "yes"])
        assert client.classify(b"img") == ("photograph", "yes")

    def test_unknown_after_retries_exhausted(self):
        client, session = vlm(["hmm", "still unclear"], max_retries=1)
        verdict, raw = client.classify(b"img")
        assert verdict == "unknown"
        assert raw == "still unclear"
        assert len(session.calls) == 2

    def test_unknown_when_all_attempts_error(self):
        client, _ = vlm([requests.ConnectionError("a"), requests.Timeout("b")])
        assert client.classify(b"img") == ("unknown", None)

    def test_malformed_response_body_is_retried(self):
        client, _ = vlm([FakeResponse({"unexpected": True}), "yes"])
        assert client.classify(b"img") == ("photograph", "yes")


def death_claim(time_str, precision=11):
    return {"mainsnak": {"datavalue": {
        "value": {"time": time_str, "precision": precision}}}}


def entity_payload(entity_id, claims):
    return FakeResponse({"entities": {entity_id: {"claims": {"P570": claims}}}})


def wikidata(replies):
    session = FakeSession(replies)
    return WikidataClient(base_url="http://wd.test/entity", session=session), session


class TestWikidataClient:
    def test_day_precision_claim(self):
        client, session = wikidata(
            [entity_payload("Q1", [death_claim("+1999-06-30T00:00:00Z")])])
        got = client.fetch_precise_death_date("Q1")
        assert got == 1999 + 180 / 365.25
        assert session.calls[0]["url"] == "http://wd.test/entity/Q1.json"

    def test_january_first_is_whole_year(self):
        client, _ = wikidata(
            [entity_payload("Q1", [death_claim("+2000-01-01T00:00:00Z")])])
        assert client.fetch_precise_death_date("Q1") == 2000.0

    def test_highest_precision_claim_wins(self):
        claims = [death_claim("+1980-00-00T00:00:00Z", precision=9),
                  death_claim("+1981-03-05T00:00:00Z", precision=11)]
        client, _ = wikidata([entity_payload("Q1", claims)])
        assert int(client.fetch_precise_death_date("Q1")) == 1981

    def test_month_precision_rejected(self):
        client, _ = wikidata(
            [entity_payload("Q1", [death_claim("+1980-06-00T00:00:00Z", precision=10)])])
        with pytest.raises(WikidataLookupError, match="precision 10"):
            client.fetch_precise_death_date("Q1")

    def test_no_death_claim(self):
        client, _ = wikidata([FakeResponse({"entities": {"Q1": {"claims": {}}}})])
        with pytest.raises(WikidataLookupError, match="no death-date claim"):
            client.fetch_precise_death_date("Q1")

    def test_http_failure(self):
        client, _ = wikidata([FakeResponse(status=404)])
        with pytest.raises(WikidataLookupError, match="unavailable"):
            client.fetch_precise_death_date("Q1")

    def test_bce_date_unsupported(self):
        client, _ = wikidata(
            [entity_payload("Q1", [death_claim("-0044-03-15T00:00:00Z")])])
        with pytest.raises(WikidataLookupError, match="unsupported"):
            client.fetch_precise_death_date("Q1")


class StubVlm:
    """classify() keyed by exact image bytes, thread-safe by construction."""

    def __init__(self, verdicts):
        self.verdicts = verdicts

    def classify(self, image_bytes):
        return self.verdicts[image_bytes]


class StubWikidata:
    def __init__(self, dates):
        self.dates = dates
        self.calls = []

    def fetch_precise_death_date(self, entity_id):
        self.calls.append(entity_id)
        value = self.dates[entity_id]
        if isinstance(value, Exception):
            raise value
        return value


def make_record(tmp_path, name, image_bytes=None, wikidata_id=None,
                photo_date=1990.0, death_date=2001.5):
    path = tmp_path / f"{name}.png"
    if image_bytes is None:
        path = tmp_path / f"{name}.missing.png"  # never written
    else:
        path.write_bytes(image_bytes)
    return SampleRecord(id=name, image_path=str(path), birth_date=1950.0,
                        photo_date=photo_date, death_date=death_date,
                        dataset_tag="faces", wikidata_id=wikidata_id)


class TestCurate:
    def test_local_only_layers(self, tmp_path):
        records = [
            make_record(tmp_path, "ok", color_image(tint=1)),
            make_record(tmp_path, "tiny", color_image(50, 50, tint=2)),
            make_record(tmp_path, "mono", gray_image()),
            make_record(tmp_path, "gone", None),
            make_record(tmp_path, "junk", b"garbage bytes"),
        ]
        accepted, decisions = curate(records, CRITERIA, local_only=True)
        assert [d.id for d in decisions] == ["ok", "tiny", "mono", "gone", "junk"]
        by_id = {d.id: d for d in decisions}
        assert by_id["ok"].accepted and by_id["ok"].reasons == ()
        assert by_id["tiny"].reasons == ("too_small",)
        assert by_id["mono"].reasons == ("grayscale",)
        assert by_id["gone"].reasons == ("image_unavailable",)
        assert by_id["junk"].reasons == ("image_unavailable",)
        assert [r.id for r in accepted] == ["ok"]

    def test_vlm_layer(self, tmp_path):
        photo = color_image(tint=3)
        paint = color_image(tint=4)
        unclear = color_image(tint=5)
        records = [
            make_record(tmp_path, "photo", photo),
            make_record(tmp_path, "paint", paint),
            make_record(tmp_path, "unclear", unclear),
        ]
        stub = StubVlm({photo: ("photograph", "yes"),
                        paint: ("not_photograph", "no, a painting"),
                        unclear: ("unknown", None)})
        accepted, decisions = curate(records, CRITERIA, vlm_client=stub)
        by_id = {d.id: d for d in decisions}
        assert by_id["photo"].accepted
        assert by_id["photo"].vlm_raw_response == "yes"
        assert by_id["paint"].reasons == ("not_photograph",)
        assert by_id["paint"].vlm_raw_response == "no, a painting"
        assert by_id["unclear"].reasons == ("not_photograph",)
        assert [r.id for r in accepted] == ["photo"]

    def test_vlm_skipped_when_not_required(self, tmp_path):
        records = [make_record(tmp_path, "ok", color_image(tint=6))]
        relaxed = CurationCriteria(require_photograph=False)
        accepted, _ = curate(records, relaxed)  # no client needed
        assert len(accepted) == 1

    def test_vlm_required_without_client(self, tmp_path):
        records = [make_record(tmp_path, "ok", color_image(tint=7))]
        with pytest.raises(ValueError, match="vlm_client"):
            curate(records, CRITERIA)

    def test_wikidata_refresh(self, tmp_path):
        img = color_image(tint=8)
        records = [
            make_record(tmp_path, "refreshed", img, wikidata_id="Q1"),
            make_record(tmp_path, "coarse", img, wikidata_id="Q2"),
            make_record(tmp_path, "impossible", img, wikidata_id="Q3"),
            make_record(tmp_path, "plain", img),
        ]
        stub = StubWikidata({
            "Q1": 1999 + 180 / 365.25,
            "Q2": WikidataLookupError("precision 9"),
            "Q3": 1980.0,  # before the photo date: contradicts the record
        })
        relaxed = CurationCriteria(require_photograph=False)
        accepted, decisions = curate(records, relaxed, wikidata_client=stub)
        by_id = {d.id: d for d in decisions}
        assert by_id["refreshed"].accepted
        assert by_id["coarse"].reasons == ("no_precise_death_date",)
        assert by_id["impossible"].reasons == ("no_precise_death_date",)
        assert by_id["plain"].accepted
        assert sorted(stub.calls) == ["Q1", "Q2", "Q3"]  # plain never looked up
        refreshed = next(r for r in accepted if r.id == "refreshed")
        assert refreshed.death_date == 1999 + 180 / 365.25

    def test_parallel_and_serial_agree(self, tmp_path):
        images = [color_image(tint=20 + i) for i in range(16)]
        records = [make_record(tmp_path, f"r{i:02d}", images[i]) for i in range(16)]
        verdicts = {img: (("photograph", "yes") if i % 3 else ("not_photograph", "no"))
                    for i, img in enumerate(images)}
        serial = curate(records, CRITERIA, vlm_client=StubVlm(verdicts), parallelism=1)
        threaded = curate(records, CRITERIA, vlm_client=StubVlm(verdicts), parallelism=8)
        assert serial[1] == threaded[1]
        assert [r.id for r in serial[0]] == [r.id for r in threaded[0]]

    def test_parallelism_validated(self, tmp_path):
        with pytest.raises(ValueError, match="parallelism"):
            curate([], CRITERIA, local_only=True, parallelism=0)

    def test_every_record_gets_exactly_one_decision(self, tmp_path):
        records = [make_record(tmp_path, f"n{i}", color_image(tint=40 + i))
                   for i in range(7)]
        _, decisions = curate(records, CRITERIA, local_only=True)
        assert [d.id for d in decisions] == [r.id for r in records]


class TestDecisionInvariants:
    def test_accepted_means_no_reasons(self):
        with pytest.raises(ValueError, match="no rejection reasons"):
            CurationDecision(id="x", accepted=True, reasons=("too_small",))
        with pytest.raises(ValueError, match="no rejection reasons"):
            CurationDecision(id="x", accepted=False, reasons=())

    def test_unknown_reason_rejected(self):
        with pytest.raises(ValueError, match="unknown rejection reasons"):
            CurationDecision(id="x", accepted=False, reasons=("bad_vibes",))


class TestAuditLog:
    def test_roundtrip(self, tmp_path):
        decisions = [
            CurationDecision(id="a", accepted=True, reasons=(), vlm_raw_response="yes"),
            CurationDecision(id="b", accepted=False, reasons=("too_small", "grayscale")),
        ]
        path = str(tmp_path / "audit.jsonl")
        write_audit_log(decisions, path)
        assert load_audit_log(path) == decisions
        lines = open(path).read().splitlines()
        assert len(lines) == 2
        assert json.loads(lines[1])["reasons"] == ["too_small", "grayscale"]
