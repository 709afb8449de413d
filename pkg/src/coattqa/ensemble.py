"""Combine several models' predictions with a no-answer veto."""

from __future__ import annotations

from typing import Sequence

NO_ANSWER = ""


def ensemble(predictions: Sequence[dict[str, str]], probabilities: Sequence[dict[str, float]]
             ) -> tuple[dict[str, str], dict[str, float]]:
    """Per question: no answer if any member abstains, else the most probable answer.

    Ties in probability go to the lowest member index.  Returns the combined
    predictions and the probability of the member each answer came from (the
    highest probability among abstaining members for vetoed questions).
    """
    if len(predictions) < 2:
        raise ValueError("ensemble needs at least two prediction sets")
    if len(probabilities) != len(predictions):
        raise ValueError("every prediction set needs a probability sidecar")
    ids = set(predictions[0])
    for k, (preds, probs) in enumerate(zip(predictions, probabilities)):
        if set(preds) != ids or set(probs) != ids:
            raise ValueError(f"member {k} covers a different set of question ids")
    out_text: dict[str, str] = {}
    out_prob: dict[str, float] = {}
    for qid in predictions[0]:
        texts = [p[qid] for p in predictions]
        probs = [float(p[qid]) for p in probabilities]
        if any(t == NO_ANSWER for t in texts):
            out_text[qid] = NO_ANSWER
            out_prob[qid] = max(pr for t, pr in zip(texts, probs) if t == NO_ANSWER)
            continue
        best = max(range(len(texts)), key=lambda k: (probs[k], -k))
        out_text[qid] = texts[best]
        out_prob[qid] = probs[best]
    return out_text, out_prob
