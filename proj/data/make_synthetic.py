#!/usr/bin/env python3
"""Generate data/synthetic_20q.jsonl, a small benchmark-shaped QA fixture.

Every gold answer appears verbatim in a gold session and nowhere else, so a
reader without memory cannot answer. Four questions are phrased with no word
in common with their evidence; lexical retrieval misses those while the oracle
context still contains the answer.

    python3 data/make_synthetic.py > data/synthetic_20q.jsonl
"""

import datetime as dt
import json
import random
import re
import sys

SEED = 20231

FILLER = [
    ("Any tips for keeping basil alive indoors?", "Give it bright light and water when the soil feels dry."),
    ("The bread dough did not rise much today.", "Warm the flour first and give the yeast a longer proof."),
    ("My python script throws a KeyError on startup.", "Print the dict keys before access and check the spelling."),
    ("It has rained all weekend here.", "A good excuse for a long indoor project."),
    ("Should I paint the fence before autumn?", "Pick a dry week with mild temperatures for the paint to cure."),
    ("The bike tire keeps going flat.", "Check the rim tape and look for a thorn stuck in the casing."),
    ("Recommend a podcast about history?", "Long form history shows are great for commutes."),
    ("How do I descale a kettle?", "Boil a mix of water and vinegar, then rinse well."),
    ("My tomatoes are splitting on the vine.", "Uneven watering causes that; keep the soil evenly moist."),
    ("What is a good stretch after sitting all day?", "Hip flexor lunges and a gentle spinal twist help."),
    ("The printer shows a paper jam with no paper inside.", "Open the rear panel and clean the roller sensor."),
    ("How long should rice rest after cooking?", "Let it sit covered for about ten minutes."),
    ("Our router drops the connection at night.", "Update its firmware and change the wireless channel."),
    ("Is it worth learning keyboard shortcuts?", "Yes, the common editing shortcuts save real time."),
    ("The sourdough starter smells like nail polish.", "It is hungry; feed it more often for a few days."),
    ("Can you explain what a mutex does?", "It lets only one thread at a time enter a critical section."),
    ("The hallway light flickers.", "Swap the bulb first, then check the fixture contacts."),
    ("How often should I rotate car tires?", "Roughly every eight thousand kilometres."),
    ("Any ideas for a rainy afternoon with kids?", "Build a blanket fort and read stories inside it."),
    ("Why does my laptop fan get loud?", "Dust buildup and background updates are common causes."),
]

# (type, question, answer, [(role, evidence turn) per gold session], paraphrased, stale_turns)
QUESTIONS = [
    ("single-session-user", "What is the name of my dog?", "Biscuit",
     [[("user", "My dog's name is Biscuit and he loves the beach.")]], False, []),
    ("single-session-user", "What instrument am I learning?", "cello",
     [[("user", "I started learning the cello last month and my teacher is patient.")]], False, []),
    ("single-session-user", "Which coffee shop do I go to every morning?", "Blue Heron",
     [[("user", "Every morning I go to the coffee shop called Blue Heron for a latte.")]], False, []),
    ("single-session-user", "Where did I relocate to?", "Lisbon",
     [[("user", "We finally moved into the new apartment in Lisbon.")]], True, []),
    ("single-session-assistant", "What pasta recipe did you recommend with anchovies?", "puttanesca",
     [[("assistant", "I recommended a spaghetti puttanesca recipe with anchovies, olives and capers.")]], False, []),
    ("single-session-assistant", "Which sorting algorithm did you suggest for nearly sorted data?", "insertion sort",
     [[("assistant", "For nearly sorted data I suggest insertion sort since it runs in close to linear time.")]],
     False, []),
    ("single-session-assistant", "What book did you point me toward?", "Dune",
     [[("assistant", "Try reading Dune by Frank Herbert this winter.")]], True, []),
    ("knowledge-update", "Where do I work now?", "Northwind",
     [[("user", "I now work at Northwind after switching jobs.")]], False,
     [("user", "I work at Contoso as a data analyst.")]),
    ("knowledge-update", "What is my current running goal?", "half marathon",
     [[("user", "My running goal changed, my current goal is a half marathon in October.")]], False,
     [("user", "My running goal is a 10k race this year.")]),
    ("knowledge-update", "How many cats do I have now?", "three",
     [[("user", "We adopted another kitten, so now I have three cats.")]], False,
     [("user", "I have a pair of cats at home.")]),
    ("temporal-reasoning", "How many days before the concert did I buy the tickets?", "10 days",
     [[("user", "I bought the concert tickets 10 days before the show.")]], False, []),
    ("temporal-reasoning", "What month did I start my pottery class?", "March",
     [[("user", "My pottery class started in March at the community center.")]], False, []),
    ("temporal-reasoning", "When was my trip to the mountains?", "last August",
     [[("user", "Hiking across Alps last August felt wonderful.")]], True, []),
    ("multi-session", "How many marathons have I run in total?", "two marathons",
     [[("user", "I ran my first marathon in Berlin.")],
      [("user", "Finished my second marathon, so two marathons in total now.")]], False, []),
    ("multi-session", "What are the names of my sisters?", "Ana and Bea",
     [[("user", "My sister Ana lives in Porto.")],
      [("user", "Both my sisters, Ana and Bea, are visiting next week.")]], False, []),
    ("multi-session", "Which countries did I visit this year?", "Japan and Peru",
     [[("user", "This year I visited Japan in April.")],
      [("user", "After Japan I also visited Peru, so Japan and Peru this year.")]], False, []),
    ("multi-session", "How much have I spent on guitar lessons overall?", "$240",
     [[("user", "Paid $120 for the first block of guitar lessons.")],
      [("user", "Another $120 block, making $240 on guitar lessons overall.")]], False, []),
    ("single-session-preference", "What kind of movies do I prefer?", "documentaries",
     [[("user", "I prefer documentaries over action movies.")]], False, []),
    ("single-session-preference", "Which seat do I like on flights?", "window seat",
     [[("user", "On flights I always like the window seat.")]], False, []),
    ("single-session-preference", "What cuisine should you suggest for my dinner?", "Thai",
     [[("user", "Spicy Thai food makes me happiest.")]], True, []),
]

REPLY = {"user": "Noted, thanks.", "assistant": "Got it."}


def words(text):
    return set(re.findall(r"[a-z0-9]+", text.lower()))


def fmt(when):
    return when.strftime("%Y/%m/%d (%a) %H:%M")


def build(index, item, rng):
    qtype, question, answer, gold, paraphrased, stale = item
    qid = f"synth_{index:02d}"
    assert answer not in question, qid
    fillers = rng.sample(FILLER, 6)
    sessions = [[{"role": "user", "content": u}, {"role": "assistant", "content": a}] for u, a in fillers]
    for u, a in fillers:
        assert answer not in u and answer not in a, (qid, u)
    gold_sessions = []
    for turns in gold:
        body = []
        for role, text in turns:
            body.append({"role": role, "content": text})
            body.append({"role": "assistant" if role == "user" else "user", "content": REPLY[role]})
        gold_sessions.append(body)
    if paraphrased:
        evidence = " ".join(t["content"] for s in gold_sessions for t in s)
        assert not (words(question) & words(evidence)), qid
    stale_session = None
    if stale:
        stale_session = [{"role": r, "content": t} for r, t in stale]
        stale_session.append({"role": "assistant", "content": REPLY["user"]})

    # Paraphrased evidence goes first (oldest); otherwise gold lands at random positions.
    ordered = list(sessions)
    if stale_session is not None:
        ordered.insert(0, stale_session)
    gold_positions = []
    for g in gold_sessions:
        pos = 0 if paraphrased else rng.randint(1 if stale_session else 0, len(ordered))
        ordered.insert(pos, g)
    ids = [f"{qid}_s{i}" for i in range(len(ordered))]
    for g in gold_sessions:
        gold_positions.append(next(i for i, s in enumerate(ordered) if s is g))
    if stale_session is not None:
        # the update must come after the stale value
        stale_pos = next(i for i, s in enumerate(ordered) if s is stale_session)
        assert all(p > stale_pos for p in gold_positions), qid

    start = dt.datetime(2023, 5, 1, 9, 0) + dt.timedelta(days=rng.randint(0, 20))
    dates = [fmt(start + dt.timedelta(days=3 * i, minutes=rng.randint(0, 600))) for i in range(len(ordered))]
    question_date = fmt(start + dt.timedelta(days=3 * len(ordered) + 1))
    return {
        "question_id": qid,
        "question_type": qtype,
        "question": question,
        "answer": answer,
        "question_date": question_date,
        "haystack_session_ids": ids,
        "haystack_dates": dates,
        "haystack_sessions": ordered,
        "answer_session_ids": [ids[p] for p in gold_positions],
    }


def main():
    rng = random.Random(SEED)
    for i, item in enumerate(QUESTIONS, start=1):
        sys.stdout.write(json.dumps(build(i, item, rng), ensure_ascii=False) + "\n")


if __name__ == "__main__":
    main()
