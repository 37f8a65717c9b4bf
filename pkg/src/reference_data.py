"""Deterministic synthetic 2024-style survey used as the reference fixture

Margins are engineered so that the referral forest has 310 trees, 1156
referral edges and a 20-wave chain, and the zero/skip shares are about
12% acquaintance, 45% close friendship, 82% kinship and 56% referral.
Every value is a closed-form function of the row index; no RNG is involved.
"""

import logging
from typing import List, Tuple

from logger import log_data_event
from survey_data import (AGE_BRACKETS, MAX_COUPONS, TOP_CODES, SurveyDataset,
                         SurveyRecord, default_categories)


logger = logging.getLogger(__name__)

YEAR_LABEL = '2024'

# (shape, count); shapes are ('chain', length), ('star', children) or
# ('full', branching, depth)
TREE_LAYOUT = [
    (('chain', 21), 1),
    (('chain', 1), 150),
    (('chain', 2), 60),
    (('chain', 3), 45),
    (('star', 2), 30),
    (('full', 3, 2), 9),
    (('full', 2, 5), 13),
    (('full', 2, 2), 2),
]

FRIEND_PATTERN = [0, 1, 0, 2, 0, 3, 0, 4, 0, 5, 0, 6, 0, 8, 0, 1, 0, 15, 2, 3]
ACQUAINTANCE_BASE = [10, 20, 40, 60, 80, 120, 200, 30, 15, 50, 25, 90, 45, 35, 70]
ACQUAINTANCE_MISSING = {0, 2, 3, 4, 6, 8, 9}
ACQUAINTANCE_ZERO = {10, 12, 13, 14, 17}
FRIEND_SKIP_OFFSETS = {20, 40, 60, 80}
KINSHIP_SKIP_ROWS = range(21, 61)
KINSHIP_BINARY_TREES = [2, 1, 3, 2]
KINSHIP_PAIRS = 6

RACES_2024 = [('white', 38), ('black', 30), ('hispanic_latino', 14), ('multiracial', 7),
              ('american_indian_alaska_native', 5), ('asian', 3), ('pacific_islander', 2),
              ('other', 1)]
AGE_SHARES = [22, 23, 20, 17, 12, 6]


def _local_parents(shape: Tuple) -> List[int]:
    """Parent positions of one tree in BFS order, -1 for the root"""
    kind = shape[0]
    if kind == 'chain':
        return [-1] + list(range(shape[1] - 1))
    if kind == 'star':
        return [-1] + [0] * shape[1]
    branching, depth = shape[1], shape[2]
    size = (branching ** (depth + 1) - 1) // (branching - 1)
    return [-1] + [(k - 1) // branching for k in range(1, size)]


def forest_parents() -> Tuple[List[int], List[int], List[Tuple]]:
    """Global (parent index, tree index, tree shape) per row"""
    parents: List[int] = []
    tree_of: List[int] = []
    shapes: List[Tuple] = []
    tree = 0
    for shape, count in TREE_LAYOUT:
        for _ in range(count):
            offset = len(parents)
            for p in _local_parents(shape):
                parents.append(-1 if p < 0 else offset + p)
                tree_of.append(tree)
            shapes.append(shape)
            tree += 1
    return parents, tree_of, shapes


def _bucket(value: int, shares: List[int]) -> int:
    edge = 0
    for k, share in enumerate(shares):
        edge += share
        if value < edge:
            return k
    return len(shares) - 1


def _acquaintance(i: int):
    r = i % 100
    if r in ACQUAINTANCE_MISSING:
        return None
    if r in ACQUAINTANCE_ZERO:
        return 0
    return ACQUAINTANCE_BASE[(i // 100) % len(ACQUAINTANCE_BASE)]


def _close_friends(i: int):
    if i < 1000 and i % 100 in FRIEND_SKIP_OFFSETS:
        return None
    return FRIEND_PATTERN[i % len(FRIEND_PATTERN)]


def _gender(i: int):
    r = i % 100
    if r < 69:
        return 'male'
    if r < 96:
        return 'female'
    return 'other' if r == 96 else None


def _flag(i: int, multiplier: int, share: int):
    value = (i * multiplier) % 100
    if value == 99:
        return None
    return value < share


def synthesize_reference_dataset() -> SurveyDataset:
    """Build the 1466-record reference survey"""
    parents, tree_of, shapes = forest_parents()
    n = len(parents)
    ids = [f"R{i + 1:04d}" for i in range(n)]
    coupons = [[f"{rid}-c{k}" for k in range(MAX_COUPONS)] for rid in ids]

    recruiter_coupon: List = [None] * n
    used = [0] * n
    for i, p in enumerate(parents):
        if p >= 0:
            recruiter_coupon[i] = coupons[p][used[p]]
            used[p] += 1

    kinship = [0] * n
    binary_deep = [t for t, shape in enumerate(shapes) if shape == ('full', 2, 5)]
    pairs = [t for t, shape in enumerate(shapes) if shape == ('chain', 2)]
    for i, t in enumerate(tree_of):
        if t in binary_deep[:len(KINSHIP_BINARY_TREES)]:
            kinship[i] = KINSHIP_BINARY_TREES[binary_deep.index(t)]
        elif t in pairs[:KINSHIP_PAIRS]:
            kinship[i] = 1
    for i in KINSHIP_SKIP_ROWS:
        kinship[i] = None

    race_shares = [share for _, share in RACES_2024]
    records = []
    for i in range(n):
        records.append(SurveyRecord(
            respondent_id=ids[i],
            recruiter_coupon=recruiter_coupon[i],
            own_coupons=coupons[i],
            hub_id=f"hub{tree_of[i] % 17:02d}",
            age_bracket=AGE_BRACKETS[_bucket((i * 7) % 100, AGE_SHARES)],
            gender=_gender(i),
            race=RACES_2024[_bucket((i * 13) % 100, race_shares)][0],
            ethnicity='hispanic' if (i * 11) % 100 < 18 else 'non-hispanic',
            shelter_status=('housed', 'sheltered', 'unsheltered')[_bucket((i * 17) % 100, [15, 30, 55])],
            veteran=_flag(i, 19, 8),
            chronic=_flag(i, 23, 35),
            mental_health=_flag(i, 29, 40),
            substance_use=_flag(i, 31, 30),
            disability=_flag(i, 37, 25),
            acquaintance_degree=_acquaintance(i),
            close_friend_degree=_close_friends(i),
            kinship_degree=kinship[i],
        ))

    ds = SurveyDataset(year_label=YEAR_LABEL, records=records, top_code=TOP_CODES[YEAR_LABEL],
                       category_dictionaries=default_categories(YEAR_LABEL))
    ds.refresh_referral_degrees()
    log_data_event(logger, f"Synthesized reference dataset: {n} records, "
                           f"{len(shapes)} referral trees", "debug")
    return ds
