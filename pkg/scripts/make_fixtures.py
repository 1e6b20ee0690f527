"""Regenerate the recorded profile-construction fixtures shipped with the mock client.

Usage: python scripts/make_fixtures.py > src/proex/profiles/data/fixtures_v1.jsonl
"""

import json
import random

GENRES = ["fantasy", "mystery", "romance", "history", "science fiction", "thriller", "poetry", "biography"]
TITLES = {
    "fantasy": ["The Ember Crown", "Shadows of Vael", "The Glass Wyrm"],
    "mystery": ["Death at Harrow Lane", "The Silent Ledger", "A Knock at Midnight"],
    "romance": ["Letters to Lisbon", "Summer at Pine Cove", "The Second Waltz"],
    "history": ["Empire of Salt", "The Long Retreat", "Rivers of Iron"],
    "science fiction": ["Orbit Zero", "The Helix Protocol", "Dust of Titan"],
    "thriller": ["Cold Signal", "The Fourth Witness", "Dead Drop"],
    "poetry": ["Salt and Ember", "Small Hours", "Field Notes on Rain"],
    "biography": ["A Life in Ink", "The Quiet General", "Notes from the Lab"],
}
# each new profile draws from its own register so it shares little wording with the original
REGISTERS = [
    "gravitates toward {a} narratives with intricate craft, savouring atmosphere over spectacle",
    "a reader drawn to brooding, meticulous {a} volumes whose prose rewards patience",
    "prizes whimsical yet austere {a} writing; lyrical sentences matter more to this person than twists",
    "seeks sprawling, archival {a} accounts told with wry restraint and tender detail",
]
SYNONYM = {
    "fantasy": "speculative", "mystery": "puzzle-driven", "romance": "heartfelt",
    "history": "archival", "science fiction": "futurist", "thriller": "kinetic",
    "poetry": "lyric", "biography": "memoir-like",
}


def user_record(idx, rng):
    g1, g2 = rng.sample(GENRES, 2)
    books = rng.sample(TITLES[g1], 2) + rng.sample(TITLES[g2], 1)
    op = (f"This user enjoys popular {g1} books and also reads some {g2}. "
          f"They like fast plots, memorable characters and bestselling authors such as the ones behind {books[0]}.")
    f2 = (f"Positive: engaging {g1} plots; strong characters in {books[1]}.\n"
          f"Negative: slow pacing in {books[2]}; predictable endings.")
    f3 = (f"Beyond {g1}, the user may value moody settings, layered {SYNONYM[g2]} themes "
          "and deliberate character growth.")
    regs = rng.sample(REGISTERS, 3)
    nps = [r.format(a=SYNONYM[g]) for r, g in zip(regs, [g1, g2, g1])]
    return {
        "kind": "user", "id": idx,
        "context": {"interactions": [f"{b} ({g})" for b, g in zip(books, [g1, g1, g2])], "side_info": ""},
        "stages": {"f1": op, "f2": f2, "f3": f3, "f4": nps},
        "prompt_set_version": "v1",
    }


def item_record(idx, rng):
    g = rng.choice(GENRES)
    title = rng.choice(TITLES[g])
    op = (f"{title} is a popular {g} book that readers like for its plot and characters. "
          f"It attracts fans of bestselling {g} authors.")
    f2 = "Positive: vivid scenes; gripping middle section.\nNegative: rushed ending; thin side characters."
    f3 = f"The book may suit readers who want {SYNONYM[g]} moods and unhurried, reflective passages."
    regs = rng.sample(REGISTERS, 3)
    nps = [r.format(a=SYNONYM[g]).replace("this person", "its audience") for r in regs]
    return {
        "kind": "item", "id": idx,
        "context": {"interactions": [f"review {k} of {title}" for k in range(3)], "side_info": f"genre: {g}"},
        "stages": {"f1": op, "f2": f2, "f3": f3, "f4": nps},
        "prompt_set_version": "v1",
    }


def main():
    rng = random.Random(20250101)
    for u in range(40):
        print(json.dumps(user_record(u, rng), sort_keys=True))
    for i in range(10):
        print(json.dumps(item_record(i, rng), sort_keys=True))


if __name__ == "__main__":
    main()
