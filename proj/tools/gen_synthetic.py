#!/usr/bin/env python3
"""Writes the bundled synthetic corpora under data/.

Labels are keyword-driven so a small model can separate them:
  aggression: one overt (OAG) or covert (CAG) cue word, none for NAG
  gender:     a gender cue word for GEN
  communal:   a communal cue word for COM
Filler words are pseudo code-mixed tokens. Output is deterministic.
"""
import pathlib
import random

ROOT = pathlib.Path(__file__).resolve().parent.parent / "data"

ONSETS = ["b", "ch", "d", "g", "h", "j", "k", "kh", "l", "m", "n", "p", "r", "s", "sh", "t", "th", "v", "y"]
VOWELS = ["a", "aa", "e", "i", "o", "u", "ai"]

OAG_CUES = ["maarbo", "pitai", "kaatenge", "barbaad", "jalado", "thappad", "khatam", "lootlo"]
CAG_CUES = ["sharam", "nautanki", "dhongi", "bechara", "chamcha", "jhootha", "paakhand", "tamasha"]
GEN_CUES = ["ladki", "aurat", "nupi", "meye", "behen", "biwi"]
COM_CUES = ["mandir", "masjid", "dharm", "jaat", "mullah", "pandit"]
NOISE = ["!!", "?", "...", ",", "😡", "🙏", "https://t.co/x1", "#trend"]


def make_fillers(rng, n):
    cues = set(OAG_CUES + CAG_CUES + GEN_CUES + COM_CUES)
    words = set()
    while len(words) < n:
        w = "".join(rng.choice(ONSETS) + rng.choice(VOWELS) for _ in range(rng.choice([2, 2, 3])))
        if w not in cues:
            words.add(w)
    return sorted(words)


def sentence(rng, fillers, agg, gen, com, noise):
    words = [rng.choice(fillers) for _ in range(rng.randint(4, 8))]
    cues = []
    if agg == "OAG":
        cues.append(rng.choice(OAG_CUES))
    elif agg == "CAG":
        cues.append(rng.choice(CAG_CUES))
    if gen == "GEN":
        cues.append(rng.choice(GEN_CUES))
    if com == "COM":
        cues.append(rng.choice(COM_CUES))
    for c in cues:
        words.insert(rng.randint(0, len(words)), c)
    if noise and rng.random() < 0.3:
        words.insert(rng.randint(0, len(words)), rng.choice(NOISE))
    return " ".join(words)


def themed(rng, fillers):
    # Unlabelled sentence where cues of one category co-occur.
    group = rng.choice([OAG_CUES, CAG_CUES, GEN_CUES, COM_CUES, None])
    words = [rng.choice(fillers) for _ in range(rng.randint(3, 6))]
    if group:
        for _ in range(rng.randint(2, 3)):
            words.insert(rng.randint(0, len(words)), rng.choice(group))
    return " ".join(words)


def labelled(rng, fillers, n, prefix):
    rows = []
    for i in range(n):
        agg = ["NAG", "CAG", "OAG"][i % 3]
        gen = "GEN" if rng.random() < 0.4 else "NGEN"
        com = "COM" if rng.random() < 0.4 else "NCOM"
        rows.append((f"{prefix}{i:03d}", sentence(rng, fillers, agg, gen, com, True), agg, gen, com))
    rng.shuffle(rows)
    return rows


def write_tsv(path, rows):
    with open(path, "w", encoding="utf-8") as f:
        f.write("id\ttext\taggression\tgender\tcommunal\n")
        for r in rows:
            f.write("\t".join(r) + "\n")


def main():
    rng = random.Random(20211220)
    fillers = make_fillers(rng, 160)
    ROOT.mkdir(exist_ok=True)
    write_tsv(ROOT / "synthetic_train.tsv", labelled(rng, fillers, 64, "tr"))
    write_tsv(ROOT / "synthetic_dev.tsv", labelled(rng, fillers, 48, "dv"))
    with open(ROOT / "synthetic_corpus.txt", "w", encoding="utf-8") as f:
        for _ in range(200):
            f.write(themed(rng, fillers) + "\n")
    with open(ROOT / "emoji_map.tsv", "w", encoding="utf-8") as f:
        f.write("# emoji<TAB>replacement\n")
        f.write("😡\tgussa\n")
        f.write("🙏\tdhonnobad\n")
        f.write("😂\thashi\n")
        f.write("❤️\tbhalobasha\n")


if __name__ == "__main__":
    main()
