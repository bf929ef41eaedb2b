"""Patient-level k-fold assignment."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, List, Tuple

from ..chipper import Manifest, ManifestRow
from ..rng import stream


@dataclass(frozen=True)
class FoldSplit:
    k: int
    assignment: Dict[str, int]
    seed: int

    def fold_of(self, patient_id: str) -> int:
        return self.assignment[patient_id]

    def validation_patients(self, fold: int) -> List[str]:
        return sorted(p for p, f in self.assignment.items() if f == fold)

    def training_patients(self, fold: int) -> List[str]:
        return sorted(p for p, f in self.assignment.items() if f != fold)

    def sizes(self) -> List[int]:
        counts = [0] * self.k
        for f in self.assignment.values():
            counts[f] += 1
        return counts


def assign_folds(patient_ids: Iterable[str], k: int = 5, seed: int = 0) -> FoldSplit:
    """Seeded shuffle of the unique, sorted ids, then round-robin into k folds."""
    ids = sorted(set(patient_ids))
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if k > len(ids):
        raise ValueError(f"k={k} folds but only {len(ids)} patients")
    order = stream(seed, "folds").permutation(len(ids))
    return FoldSplit(k, {ids[j]: pos % k for pos, j in enumerate(order)}, seed)


def split_manifest(manifest: Manifest, split: FoldSplit, fold: int) -> Tuple[List[ManifestRow], List[ManifestRow]]:
    """(train rows, validation rows); raises if any patient lands on both sides."""
    if not 0 <= fold < split.k:
        raise ValueError(f"fold {fold} outside [0, {split.k})")
    missing = {r.patient_id for r in manifest.rows} - set(split.assignment)
    if missing:
        raise ValueError(f"patients without a fold: {sorted(missing)[:5]}")
    train = [r for r in manifest.rows if split.assignment[r.patient_id] != fold]
    val = [r for r in manifest.rows if split.assignment[r.patient_id] == fold]
    leaked = {r.patient_id for r in train} & {r.patient_id for r in val}
    if leaked:
        raise AssertionError(f"patient-level leakage in fold {fold}: {sorted(leaked)}")
    return train, val
