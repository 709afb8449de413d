"""Question paraphrasing by round-trip translation.

A sampled fraction of the training questions is translated to a pivot
language and back; each paraphrase is appended as a new question that shares
the original context, answers and answerability flag.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol

import httpx
import numpy as np

from .data import iter_qas, validate_squad

log = logging.getLogger(__name__)

SOURCE_LANG = "en"
DEFAULT_PIVOT = "fr"
ID_SUFFIX = "-bt1"
API_KEY_ENV = "COATTQA_TRANSLATE_KEY"


class TranslationError(RuntimeError):
    pass


class Translator(Protocol):
    def translate(self, text: str, source_lang: str, target_lang: str) -> str: ...


class IdentityTranslator:
    def translate(self, text: str, source_lang: str, target_lang: str) -> str:
        return text


class MockTranslator:
    """Deterministic stand-in for a translation service.

    Going out of the home language, each word found in ``synonyms`` is
    replaced with probability ``rate`` (decided by a generator seeded from
    ``seed`` and the text); coming back home the text is returned unchanged,
    so a round trip applies exactly one rewrite pass.
    """

    def __init__(self, synonyms: dict[str, str] | None = None, rate: float = 1.0, seed: int = 0,
                 home_lang: str = SOURCE_LANG):
        self.synonyms = dict(DEFAULT_SYNONYMS if synonyms is None else synonyms)
        self.rate = rate
        self.seed = seed
        self.home_lang = home_lang

    def translate(self, text: str, source_lang: str, target_lang: str) -> str:
        if target_lang == self.home_lang:
            return text
        digest = hashlib.sha256(f"{self.seed}\0{text}".encode()).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))

        def swap(match: re.Match) -> str:
            word = match.group()
            repl = self.synonyms.get(word.lower())
            if repl is None or rng.random() >= self.rate:
                return word
            return repl.capitalize() if word[0].isupper() else repl

        return re.sub(r"[A-Za-z]+", swap, text)


DEFAULT_SYNONYMS = {
    "big": "large", "large": "big", "what": "which", "which": "what", "begin": "start",
    "start": "begin", "kind": "type", "type": "kind", "many": "numerous", "famous": "renowned",
}


class HttpTranslator:
    """Client for a JSON translation endpoint.

    Requests are ``POST {q, source, target}`` and responses carry
    ``{translatedText}``.  The API key is read from ``$COATTQA_TRANSLATE_KEY``
    and sent as a bearer token.  Successful translations are cached on disk
    under a content hash so interrupted runs resume without repeating calls.
    """

    def __init__(self, endpoint: str, cache_dir: str | Path | None = None, retries: int = 3,
                 timeout: float = 30.0, max_in_flight: int = 4, requests_per_second: float | None = None,
                 backoff: float = 0.5, client: httpx.Client | None = None, api_key: str | None = None):
        self.endpoint = endpoint
        self.cache_dir = Path(cache_dir) if cache_dir is not None else None
        self.retries = retries
        self.max_in_flight = max_in_flight
        self.backoff = backoff
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self._client = client or httpx.Client(timeout=timeout)
        self._cache_lock = threading.Lock()
        self._rate_lock = threading.Lock()
        self._min_interval = 1.0 / requests_per_second if requests_per_second else 0.0
        self._next_slot = 0.0

    def _cache_path(self, text: str, source: str, target: str) -> Path | None:
        if self.cache_dir is None:
            return None
        key = hashlib.sha256(json.dumps([text, source, target]).encode("utf-8")).hexdigest()
        return self.cache_dir / key[:2] / f"{key}.json"

    def _wait_for_slot(self) -> None:
        if not self._min_interval:
            return
        with self._rate_lock:
            now = time.monotonic()
            slot = max(now, self._next_slot)
            self._next_slot = slot + self._min_interval
        if slot > now:
            time.sleep(slot - now)

    def translate(self, text: str, source_lang: str, target_lang: str) -> str:
        path = self._cache_path(text, source_lang, target_lang)
        if path is not None and path.exists():
            return json.loads(path.read_text(encoding="utf-8"))["translatedText"]
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        body = {"q": text, "source": source_lang, "target": target_lang}
        last_error: Exception | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            self._wait_for_slot()
            try:
                resp = self._client.post(self.endpoint, json=body, headers=headers)
                resp.raise_for_status()
                translated = resp.json()["translatedText"]
                if not isinstance(translated, str) or (text.strip() and not translated.strip()):
                    raise TranslationError(f"empty or malformed translation for {text!r}")
                break
            except (httpx.HTTPError, KeyError, ValueError, TranslationError) as exc:
                last_error = exc
                log.debug("translation attempt %d failed: %s", attempt + 1, exc)
        else:
            raise TranslationError(f"translation failed after {self.retries + 1} attempts: {last_error}")
        if path is not None:
            with self._cache_lock:
                path.parent.mkdir(parents=True, exist_ok=True)
                tmp = path.with_suffix(".tmp")
                tmp.write_text(json.dumps({"translatedText": translated}), encoding="utf-8")
                os.replace(tmp, path)
        return translated


def backtranslate(question: str, translator: Translator, pivot_lang: str = DEFAULT_PIVOT,
                  source_lang: str = SOURCE_LANG) -> str:
    if not question.strip():
        raise ValueError("cannot backtranslate an empty question")
    pivot = translator.translate(question, source_lang, pivot_lang)
    return translator.translate(pivot, pivot_lang, source_lang).strip()


@dataclass
class AugmentManifest:
    fraction: float
    seed: int
    pivot_lang: str
    eligible: int
    sampled: int
    pairs: list[tuple[str, str]] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        out = asdict(self)
        out["pairs"] = [list(p) for p in self.pairs]
        return out


def sample_count(fraction: float, n: int) -> int:
    return int(math.floor(fraction * n + 0.5))


def augment_dataset(raw: dict, fraction: float, translator: Translator, seed: int = 0,
                    pivot_lang: str = DEFAULT_PIVOT, max_in_flight: int | None = None
                    ) -> tuple[dict, AugmentManifest]:
    """Return an augmented copy of a SQuAD-v2 dataset and its manifest.

    ``round(fraction * N)`` questions are sampled uniformly without
    replacement.  Each paraphrase is appended to its paragraph's question list
    with id ``<original id>-bt1``; questions whose translation fails are
    skipped and listed in the manifest.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    validate_squad(raw)
    out = copy.deepcopy(raw)
    qas = [(para, qa) for para, qa in iter_qas(out)]
    existing = {qa["id"] for _, qa in qas}
    k = sample_count(fraction, len(qas))
    chosen = sorted(np.random.default_rng(seed).choice(len(qas), size=k, replace=False).tolist())

    def work(i: int) -> str | None:
        try:
            return backtranslate(qas[i][1]["question"], translator, pivot_lang)
        except TranslationError as exc:
            log.warning("skipping %s: %s", qas[i][1]["id"], exc)
            return None

    workers = max_in_flight or getattr(translator, "max_in_flight", 1)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, chosen))
    else:
        results = [work(i) for i in chosen]

    manifest = AugmentManifest(fraction, seed, pivot_lang, eligible=len(qas), sampled=k)
    for i, text in zip(chosen, results):
        para, qa = qas[i]
        if text is None:
            manifest.skipped.append(qa["id"])
            continue
        new_id = qa["id"] + ID_SUFFIX
        while new_id in existing:
            new_id += ID_SUFFIX
        existing.add(new_id)
        clone = copy.deepcopy(qa)
        clone["id"] = new_id
        clone["question"] = text
        para["qas"].append(clone)
        manifest.pairs.append((qa["id"], new_id))
    return out, manifest
