"""Shared fixtures: deterministic synthetic clusters at desk scale."""

from __future__ import annotations

import json

import pytest

from sgsum.textproc import Cluster, make_cluster

# Deterministic syllable bank: 16 consonants x 16 rimes = 256 syllables.
# Each toy cluster draws from its own 32-syllable slice, so clusters share
# no vocabulary and overfitting tests cannot interfere across clusters.
_CONSONANTS = ["b", "c", "d", "g", "h", "k", "l", "m", "n", "p", "q", "r", "s", "t", "v", "x"]
_RIMES = ["a", "am", "an", "ang", "e", "em", "en", "i", "im", "in", "o", "om", "on", "u", "um", "un"]
SYLLABLES = [c + r for c in _CONSONANTS for r in _RIMES]

# (global sentence indices of the two reference sentences) per toy cluster;
# doc0 holds sentences 0-2, doc1 holds 3-5.
TOY_TARGETS = [(0, 4), (1, 3), (2, 5), (0, 3), (1, 5)]


def _sentence(words) -> str:
    return " ".join(words).capitalize() + "."


def toy_records() -> list[dict]:
    """Five 2-document clusters whose summaries are two verbatim sentences.

    The greedy oracle therefore recovers exactly the target pair, and the
    remaining sentences share no tokens with the reference.
    """
    records = []
    for ci in range(5):
        bank = SYLLABLES[32 * ci: 32 * (ci + 1)]
        target1 = _sentence(bank[0:6])
        target2 = _sentence(bank[6:12])
        filler = bank[12]
        others = [
            _sentence(bank[12:17]),
            _sentence(bank[17:22]),
            _sentence(bank[22:27]),
            _sentence(bank[27:31] + [filler]),
        ]
        a, b = TOY_TARGETS[ci]
        slots: list[str | None] = [None] * 6
        slots[a] = target1
        slots[b] = target2
        rest = iter(others)
        for i in range(6):
            if slots[i] is None:
                slots[i] = next(rest)
        records.append({
            "cluster_id": f"toy-{ci}",
            "documents": [
                {"doc_id": f"toy-{ci}-d0", "text": " ".join(slots[0:3])},
                {"doc_id": f"toy-{ci}-d1", "text": " ".join(slots[3:6])},
            ],
            "summary": target1 + " " + target2,
        })
    return records


def records_to_clusters(records) -> list[Cluster]:
    return [
        make_cluster(
            r["cluster_id"],
            [(d["doc_id"], d["text"]) for d in r["documents"]],
            summary=r.get("summary"),
        )
        for r in records
    ]


def write_jsonl(path, records) -> None:
    path.write_text(
        "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in records),
        encoding="utf-8",
    )


@pytest.fixture(scope="session")
def toy_dataset() -> list[dict]:
    return toy_records()


@pytest.fixture(scope="session")
def toy_clusters(toy_dataset) -> list[Cluster]:
    return records_to_clusters(toy_dataset)


@pytest.fixture()
def vn_cluster() -> Cluster:
    """A small mixed-similarity cluster with real Vietnamese text."""
    return make_cluster(
        "vn-1",
        [
            ("vn-1-d0",
             "Thị trường chứng khoán tăng mạnh hôm nay. "
             "Nhà đầu tư lo lắng về lãi suất. "
             "Cổ phiếu ngân hàng giảm sâu."),
            ("vn-1-d1",
             "Chỉ số tăng điểm trong phiên sáng. "
             "Thanh khoản thị trường cải thiện rõ."),
        ],
        summary="Thị trường chứng khoán tăng mạnh hôm nay. Thanh khoản thị trường cải thiện rõ.",
    )
