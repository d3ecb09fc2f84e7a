"""Bundled synthetic corpora: a stand-in for the real (licensed) debate data.

Everything here is seeded and deterministic. The debate corpus spans 8
sources in 4 planted similarity groups (1/2/1/4 sources); sources in the
same group draw from the same topical lexicon, so embedding-based
clustering can recover the planted partition. Three probe words
(deterrent, endorse, bureaucrat) are injected ~64 times each; the word
frequency profile is tuned so a 2,000-token WordPiece vocabulary trained
on this corpus carries each probe as a single whole-word token.

A separate general-text generator produces a domain-free corpus of the
same scale that never contains the probe words, for vocabulary-contrast
experiments, plus small generators for memorization runs and toy
downstream tasks.
"""

from __future__ import annotations

import json
from pathlib import Path

from debatelm.rng import seed_stream

TARGET_WORDS = ("deterrent", "endorse", "bureaucrat")

FUNCTION_WORDS = (
    "the of to and in we that is for it on this with as our they be at by from have "
    "will must are was were not".split()
)

GLOBAL_WORDS = """government policy debate nation people party vote election law reform
budget council member state question order amendment motion house committee minister
president security economy public national support oppose agree reject propose defend
measure system power country leader citizen decision process reason evidence interest
right freedom justice market trade growth crisis region border treaty force action
plan report record session agenda issue matter point view position argument claim
premise""".split()

GROUP_LEXICONS = {
    "tv": """campaign candidate primary caucus ballot voter swing rally pledge applause
moderator segment podium audience anchor network studio commercial poll surrogate
frontrunner debate stage spin soundbite landslide incumbent challenger nominee ticket
runningmate stump microphone television broadcast ratings viewer township precinct""".split(),
    "un": """resolution assembly delegation sanctions peacekeeping sovereignty charter
ambassador disarmament multilateral mandate protocol ceasefire humanitarian veto
secretariat reaffirm underscore deplore convene plenipotentiary nonproliferation
interstate stability dialogue coexistence decolonization development cooperation
delegate session agenda implementation framework commitment declaration accord""".split(),
    "uk": """commons speaker backbench whip chancellor exchequer constituency honourable
gentleman lady bill clause reading division lobby tory labour liberal bench mace
dispatch box prorogation byelection manifesto shadow cabinet privy woolsack hansard
standing select scrutiny urgent adjournment petition crossbench peer lords""".split(),
    "parl": """parliament directive regulation subsidiarity federal province holyrood
chamber plenary rapporteur quorum sitting presiding convener deputy tabled
supplementary portfolio devolved legislative consent continental alliance bloc
coalition ratify transpose ombudsman auditor procurement cohesion structural""".split(),
}

# Short common words folded in as light filler; their merge paths absorb
# leftover vocabulary budget without displacing the probe words.
SHORT_COMMON = """fine gate lake line make mine mode nine note pine pose ride rose sage
sale save take tale tone vine vote wage wake wave wine zone plate slate frame grape
stake spade shame flame stone theme tribe pride quote taste phase slope shade smile
snake spike trade fort mint melt tint salt sort port tort hunt punt runt gust just
must part tart mart hurt grant point print shift short smart sport spent stint trust
twist vault joint paint quilt roost shout stunt vest nest rest pest test zest mast
cast fast last past vast lift gift raft loft tuft dusk task tusk rust crust frost
toast twig swan sled prow knot plum reef kelp moss fern dune cliff glen marsh""".split()

GENERAL_TOPICS = {
    "weather": """forecast sunshine rainfall thunder drizzle breeze climate season
temperature humidity snowfall frost sleet overcast cloudburst barometer monsoon
drought heatwave blizzard meadow valley horizon sunrise sunset twilight hailstone
puddle rainbow gusty cyclone whirlwind fogbank icicle thaw downpour""".split(),
    "cooking": """kitchen recipe flavour butter garlic onion pepper simmer roast bake
saucepan skillet whisk ladle vinegar mustard cinnamon oregano basil parsley dessert
pastry dough yeast caramel raisin walnut almond honey syrup gravy broth noodle
dumpling casserole marinade garnish crouton zest sprinkle knead""".split(),
    "travel": """journey luggage passport airport terminal carriage railway harbour
voyage compass itinerary lodging hostel cottage village market bazaar souvenir
landmark museum gallery fountain bridge tunnel highway junction ferry lighthouse
cabin platform locomotive steamer caravan outpost crossing wharf""".split(),
    "sports": """stadium referee whistle halftime striker keeper midfield tackle
sprint marathon relay hurdle javelin discus podium medal trophy league fixture
training coach roster umpire innings wicket paddle racket scoreboard dugout
penalty corner offside dribble volley smash rebound lap""".split(),
    "music": """melody rhythm harmony chorus verse tempo concert orchestra violin
trumpet clarinet percussion conductor soprano baritone ballad sonata symphony
quartet ensemble acoustic amplifier lyric refrain octave chord cadence encore
bassoon cymbal mandolin banjo flute piccolo recital overture serenade""".split(),
    "school": """classroom teacher lesson homework notebook pencil eraser chalk
semester lecture tutorial seminar campus library textbook syllabus diploma
graduate scholar professor thesis exam grading recess locker backpack
blackboard dormitory cafeteria gymnasium principal counselor attendance
assignment quiz workbook binder marker crayon""".split(),
}

POSITIVE_CUES = "praise commend approve welcome progress success excellent constructive".split()
NEGATIVE_CUES = "condemn oppose failure decline damaging harmful crisis reckless".split()

SOURCES = {
    "us_tv_debates": "tv",
    "un_assembly": "un",
    "un_council": "un",
    "uk_commons_archive": "uk",
    "uk_recent": "parl",
    "au_house": "parl",
    "scot_parliament": "parl",
    "eu_leaders": "parl",
}

# Each probe word is concentrated in three sources (22 sentences each, 66
# occurrences total) so the shared-vocabulary mass per source stays small
# enough for the planted clusters to remain separable.
PROBE_PLACEMENT = {
    "deterrent": ("un_assembly", "un_council", "eu_leaders"),
    "endorse": ("uk_commons_archive", "uk_recent", "us_tv_debates"),
    "bureaucrat": ("au_house", "scot_parliament", "us_tv_debates"),
}

_DECOR_TAGS = ("<b>", "</b>", "<i>", "</i>", "<p>", "</p>", "<br/>")
_DECOR_URLS = (
    "https://debates.example/archive/{n}",
    "https://records.example/item?id={n}",
    "http://transcripts.example/{n}.html",
)


def _with_variants(words):
    """Base words plus -s and -ed/-d inflections (length >= 5 only)."""
    out = list(words)
    for w in words:
        if len(w) >= 5 and w.isalpha():
            out.append(w + "s")
            out.append(w + "d" if w.endswith("e") else w + "ed")
    return out


def _salad_sentence(rng, lexicon, global_pool, n_lo=7, n_hi=14,
                    w_func=0.15, w_glob=0.06) -> str:
    words = []
    n = int(rng.integers(n_lo, n_hi))
    for _ in range(n):
        u = rng.random()
        if u < w_func:
            words.append(FUNCTION_WORDS[rng.integers(len(FUNCTION_WORDS))])
        elif u < w_func + w_glob:
            words.append(global_pool[rng.integers(len(global_pool))])
        else:
            words.append(lexicon[rng.integers(len(lexicon))])
    if len(words) > 4 and rng.random() < 0.15:
        k = int(rng.integers(2, len(words) - 1))
        words[k] = words[k] + ","
    sentence = " ".join(words)
    sentence = sentence[0].upper() + sentence[1:]
    return sentence + ("?" if rng.random() < 0.08 else ".")


def _decorate(rng, text: str) -> str:
    """Inject the raw noise that ingestion is supposed to strip."""
    parts = text.split(" ")
    if rng.random() < 0.5:
        k = int(rng.integers(0, len(parts)))
        tag = _DECOR_TAGS[rng.integers(len(_DECOR_TAGS))]
        parts[k] = tag + parts[k] + ("</b>" if tag == "<b>" else "")
    if rng.random() < 0.35:
        url = _DECOR_URLS[rng.integers(len(_DECOR_URLS))].format(n=int(rng.integers(10_000)))
        k = int(rng.integers(0, len(parts) + 1))
        parts.insert(k, "see " + url)
    out = " ".join(parts)
    if rng.random() < 0.2:
        out = out.replace(". ", ".\n\n", 1)
    return out


def generate_debate_corpus(seed: int = 0, docs_per_source: int = 40,
                           dirty: bool = True) -> list[dict]:
    """Raw records {id, source, date, text} across the 8 planted sources."""
    rng = seed_stream(seed, "synth-debate")
    global_pool = _with_variants(GLOBAL_WORDS)
    records = []
    sources = list(SOURCES)
    for source in sources:
        lexicon = _with_variants(GROUP_LEXICONS[SOURCES[source]])
        for d in range(docs_per_source):
            sentences = [
                _salad_sentence(rng, lexicon, global_pool)
                for _ in range(int(rng.integers(4, 8)))
            ]
            text = " ".join(sentences)
            if dirty:
                text = _decorate(rng, text)
            year = 1946 + int(rng.integers(0, 79))
            records.append(
                {
                    "id": f"{source}-{d:04d}",
                    "source": source,
                    "date": f"{year}-{int(rng.integers(1, 13)):02d}-{int(rng.integers(1, 29)):02d}",
                    "text": text,
                }
            )
        # Probe-word sentences: 22 per (target, hosting source).
        probe_sents = []
        for target, hosts in PROBE_PLACEMENT.items():
            if source in hosts:
                for _ in range(22):
                    a = global_pool[rng.integers(len(global_pool))]
                    b = global_pool[rng.integers(len(global_pool))]
                    c = global_pool[rng.integers(len(global_pool))]
                    probe_sents.append(f"We {a} {target} {b} {c}.")
        if probe_sents:
            records.append(
                {
                    "id": f"{source}-probes",
                    "source": source,
                    "date": "2000-01-01",
                    "text": " ".join(probe_sents),
                }
            )
    # Short-word filler spreads the remaining vocabulary budget; 2
    # occurrences per word, split thinly across sources.
    filler_sents = [f"They {w} it." for w in SHORT_COMMON for _ in range(2)]
    per_source = -(-len(filler_sents) // len(sources))
    for k, source in enumerate(sources):
        chunk = filler_sents[k * per_source : (k + 1) * per_source]
        if chunk:
            records.append(
                {
                    "id": f"{source}-filler",
                    "source": source,
                    "date": "2000-01-02",
                    "text": " ".join(chunk),
                }
            )
    return records


def generate_general_corpus(seed: int = 0, docs: int = 360) -> list[dict]:
    """Domain-free general text of comparable scale; never contains the
    probe words, so a vocabulary trained here must fragment them."""
    rng = seed_stream(seed, "synth-general")
    topics = {name: _with_variants(words) for name, words in GENERAL_TOPICS.items()}
    names = sorted(topics)
    all_general = [w for ws in topics.values() for w in ws]
    records = []
    for d in range(docs):
        lexicon = topics[names[d % len(names)]]
        sentences = [
            _salad_sentence(rng, lexicon, all_general)
            for _ in range(int(rng.integers(4, 8)))
        ]
        records.append(
            {
                "id": f"general-{d:04d}",
                "source": "general_text",
                "date": None,
                "text": " ".join(sentences),
            }
        )
    filler = []
    for w in SHORT_COMMON:
        for _ in range(2):
            filler.append(f"They {w} it.")
    records.append(
        {"id": "general-filler", "source": "general_text", "date": None,
         "text": " ".join(filler)}
    )
    for rec in records:
        assert not any(t in rec["text"] for t in TARGET_WORDS)
    return records


def generate_memorization_sentences(n: int = 100, seed: int = 0) -> list[str]:
    """n distinct word-salad sentences; compact vocabulary, no shared
    templates, so an encoder can drive masked perplexity near 1."""
    rng = seed_stream(seed, "synth-memorize")
    pool = GLOBAL_WORDS + GROUP_LEXICONS["un"] + GROUP_LEXICONS["parl"]
    sentences: list[str] = []
    seen = set()
    while len(sentences) < n:
        k = int(rng.integers(7, 11))
        idx = rng.choice(len(pool), size=k, replace=False)
        sentence = " ".join(pool[i] for i in idx) + "."
        if sentence in seen:
            continue
        seen.add(sentence)
        sentences.append(sentence)
    return sentences


# ---------------------------------------------------------------------------
# Toy downstream tasks


def generate_sentiment_task(seed: int = 0, n_train: int = 48, n_dev: int = 12,
                            n_test: int = 12) -> dict[str, list[dict]]:
    """Balanced positive/negative speeches keyed by cue words."""
    rng = seed_stream(seed, "synth-sentiment")
    global_pool = _with_variants(GLOBAL_WORDS)

    def example(label: str) -> dict:
        cues = POSITIVE_CUES if label == "positive" else NEGATIVE_CUES
        words = [global_pool[rng.integers(len(global_pool))] for _ in range(int(rng.integers(5, 9)))]
        for _ in range(2):
            words.insert(int(rng.integers(0, len(words) + 1)), cues[rng.integers(len(cues))])
        return {"text": " ".join(words) + ".", "label": label}

    splits = {}
    for split, n in (("train", n_train), ("dev", n_dev), ("test", n_test)):
        examples = [example("positive" if i % 2 == 0 else "negative") for i in range(n)]
        splits[split] = examples
    return splits


def generate_overfit_task(seed: int = 0, n: int = 10) -> list[dict]:
    """Trivially separable sentiment examples (the first word decides the
    label); small fine-tuning runs can reach a perfect train metric."""
    rng = seed_stream(seed, "synth-overfit")
    pool = GLOBAL_WORDS
    examples = []
    for i in range(n):
        positive = i % 2 == 0
        cue = "praise" if positive else "condemn"
        filler = " ".join(pool[rng.integers(len(pool))] for _ in range(4))
        examples.append(
            {"text": f"{cue} {filler}.", "label": "positive" if positive else "negative"}
        )
    return examples


def generate_component_task(seed: int = 0, n_train: int = 40, n_dev: int = 10,
                            n_test: int = 10) -> dict[str, list[tuple[list[str], list[str]]]]:
    """BIO-tagged claim/premise spans cued by 'therefore' / 'because'."""
    rng = seed_stream(seed, "synth-component")
    global_pool = _with_variants(GLOBAL_WORDS)

    def sentence() -> tuple[list[str], list[str]]:
        tokens = [global_pool[rng.integers(len(global_pool))] for _ in range(int(rng.integers(4, 7)))]
        tags = ["O"] * len(tokens)
        if rng.random() < 0.8:
            span = [global_pool[rng.integers(len(global_pool))] for _ in range(int(rng.integers(2, 4)))]
            kind = "claim" if rng.random() < 0.5 else "premise"
            cue = "therefore" if kind == "claim" else "because"
            tokens.append(cue)
            tags.append("O")
            tokens.extend(span)
            tags.extend([f"B-{kind}"] + [f"I-{kind}"] * (len(span) - 1))
        return tokens, tags

    splits = {}
    for split, n in (("train", n_train), ("dev", n_dev), ("test", n_test)):
        splits[split] = [sentence() for _ in range(n)]
    return splits


def generate_relation_task(seed: int = 0, n_train: int = 40, n_dev: int = 10,
                           n_test: int = 10) -> dict[str, list[dict]]:
    """Support/attack pairs: text_b agrees with or rejects text_a."""
    rng = seed_stream(seed, "synth-relation")
    global_pool = _with_variants(GLOBAL_WORDS)

    def example(label: str) -> dict:
        a = [global_pool[rng.integers(len(global_pool))] for _ in range(int(rng.integers(4, 8)))]
        stance = "we agree and support this" if label == "support" else "we reject and oppose this"
        b = [global_pool[rng.integers(len(global_pool))] for _ in range(int(rng.integers(2, 5)))]
        return {"text_a": " ".join(a) + ".", "text_b": stance + " " + " ".join(b) + ".",
                "label": label}

    splits = {}
    for split, n in (("train", n_train), ("dev", n_dev), ("test", n_test)):
        splits[split] = [example("support" if i % 2 == 0 else "attack") for i in range(n)]
    return splits


# ---------------------------------------------------------------------------
# File writers


def write_raw_jsonl(records: list[dict], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")


def write_classification_jsonl(examples: list[dict], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(ex, ensure_ascii=False, sort_keys=True) + "\n")


def write_conll(sentences, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for tokens, tags in sentences:
            for token, tag in zip(tokens, tags):
                fh.write(f"{token} {tag}\n")
            fh.write("\n")
