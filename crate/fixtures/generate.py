#!/usr/bin/env python3
"""Generates the bundled persona-chat style fixture in ConvAI2 text format.

Usage: python3 fixtures/generate.py   (writes train.txt, valid.txt, test.txt)

The corpus is synthetic: speakers hold 4 persona facts, greet each other and
trade questions and answers about those facts with varied phrasing. Fillers and
replies are composed independently of context, and about half
the turns carry a random anecdote.
"""
import os
import random

NAMES = """rex bella max luna charlie daisy milo coco rocky ziggy pepper biscuit
oscar tasha drunky mango nala otis peanut waffles""".split()
ANIMALS = ["dog", "cat", "parrot", "hamster", "turtle", "rabbit"]
FOODS = """sushi tacos pizza lasagna curry ramen burritos pancakes seafood
dumplings falafel paella""".split()
JOBS = """nurse teacher pilot plumber chef lawyer dentist farmer baker
mechanic librarian firefighter""".split()
HOBBIES = ["hike", "swim", "paint", "dance", "read", "bake", "garden",
           "knit", "surf", "ski", "fish", "sing"]
CITIES = """ohio texas denver boston miami seattle chicago portland atlanta
phoenix memphis austin""".split()
CARS = ["subaru", "nissan", "honda", "toyota", "jeep", "tesla", "ford", "volvo"]
GENRES = ["jazz", "rock", "country", "metal", "blues", "reggae", "classical", "pop"]

TOPICS = ["pet", "food", "job", "hobby", "city", "car", "music"]


def sample_value(rng, topic):
    if topic == "pet":
        return (rng.choice(ANIMALS), rng.choice(NAMES))
    return rng.choice({"food": FOODS, "job": JOBS, "hobby": HOBBIES, "city": CITIES,
                       "car": CARS, "music": GENRES}[topic])


def persona_line(topic, v):
    return {
        "pet": lambda: f"i have a {v[0]} named {v[1]}.",
        "food": lambda: f"my favorite food is {v}.",
        "job": lambda: f"i work as a {v}.",
        "hobby": lambda: f"i like to {v}.",
        "city": lambda: f"i live in {v}.",
        "car": lambda: f"i drive a {v}.",
        "music": lambda: f"i listen to {v} music.",
    }[topic]()


def statement(rng, topic, v):
    opts = {
        "pet": [f"i have a {v[0]} named {v[1]} .", f"my {v[0]} {v[1]} is the best !",
                f"{v[1]} is my {v[0]} , he is so cute .", f"i take my {v[0]} {v[1]} everywhere ."],
        "food": [f"i love {v} .", f"my favorite food is {v} .", f"i could eat {v} every day !",
                 f"{v} is the best food ever ."],
        "job": [f"i work as a {v} .", f"i am a {v} by trade .", f"i am a {v} , it keeps me busy .",
                f"{v} here , i love my job ."],
        "hobby": [f"i like to {v} .", f"i {v} every weekend !", f"in my free time i {v} .",
                  f"i love to {v} , it relaxes me ."],
        "city": [f"i live in {v} .", f"i am from {v} .", f"{v} is my home town .",
                 f"i just moved to {v} ."],
        "car": [f"i drive a {v} .", f"my car is a {v} .", f"i have an old {v} .",
                f"i love my {v} , it runs great ."],
        "music": [f"i listen to {v} music .", f"{v} is my favorite music .",
                  f"i love {v} , i play it all day .", f"i am a big {v} fan ."],
    }[topic]
    return rng.choice(opts)


def negative(rng, topic):
    opts = {
        "pet": ["i do not have any pets .", "no pets for me , sadly ."],
        "food": ["i eat anything really .", "i am not picky about food ."],
        "job": ["i do not work right now .", "i am between jobs ."],
        "hobby": ["i do not have much free time .", "i mostly watch tv ."],
        "city": ["i move around a lot .", "i live in a small town ."],
        "car": ["i do not drive .", "i take the bus ."],
        "music": ["i listen to whatever is on .", "i do not listen to music much ."],
    }[topic]
    return rng.choice(opts)


def question(rng, topic):
    opts = {
        "pet": ["do you have any pets ?", "are you an animal person ?"],
        "food": ["what is your favorite food ?", "what do you like to eat ?"],
        "job": ["what do you do for work ?", "what is your job ?"],
        "hobby": ["what do you do for fun ?", "any hobbies ?"],
        "city": ["where do you live ?", "where are you from ?"],
        "car": ["what do you drive ?", "do you have a car ?"],
        "music": ["what music do you like ?", "do you like music ?"],
    }[topic]
    return rng.choice(opts)


GREETINGS = ["hi , how are you today ?", "hello ! how is your day going ?",
             "hey there , nice to meet you .", "hi ! what is up ?"]
OPENERS = ["i am", "doing", "feeling", "honestly", "today i am", "just"]
MOODS = ["great", "well", "tired", "okay", "busy", "happy", "sleepy", "fine"]
ENDS = [", thanks .", ", thank you !", ".", "!", ", you ?", ", how are you ?"]
EXCLAIMS = ["that is", "wow ,", "oh ,", "sounds", "i think that is", "haha ,"]
ADJS = ["cool", "nice", "awesome", "fun", "neat", "great", "interesting", "amazing", "lovely", "wild"]
TAILS = ["", "", " what about you ?", " how about you ?", " and you ?", " do you ?",
         " pretty cool right ?", " it is nice ."]


WHEN = ["yesterday", "last night", "this morning", "on sunday", "last week", "today",
        "over the summer", "after work"]
DEEDS = ["watched", "cooked", "bought", "found", "fixed", "painted", "lost", "cleaned",
         "borrowed", "sold"]
THINGS = ["a movie", "pasta", "a bike", "a lamp", "my kitchen", "a fence", "some shoes",
          "a puzzle", "my keys", "a guitar", "the garage", "a tent"]


def anecdote(rng):
    return f"{rng.choice(WHEN)} i {rng.choice(DEEDS)} {rng.choice(THINGS)} ."


def reply(rng):
    return f"{rng.choice(OPENERS)} {rng.choice(MOODS)} {rng.choice(ENDS)}"


def filler(rng):
    return f"{rng.choice(EXCLAIMS)} {rng.choice(ADJS)} {rng.choice(['.', '!', '.'])}"


def persona(rng):
    topics = rng.sample(TOPICS, 4)
    return {t: sample_value(rng, t) for t in topics}


def dialogue(rng):
    people = [persona(rng), persona(rng)]
    discussed = set()
    turns = []
    pending = None
    n_turns = rng.choice([8, 8, 10])
    for i in range(n_turns):
        me = people[i % 2]
        parts = []
        if i == 0:
            parts.append(rng.choice(GREETINGS))
        elif i == 1:
            parts.append(reply(rng))
        if pending is not None:
            if pending in me:
                parts.append(statement(rng, pending, me[pending]) + rng.choice(TAILS))
            else:
                parts.append(negative(rng, pending))
            pending = None
        elif i > 1:
            parts.append(filler(rng))
        fresh = [t for t in TOPICS if t not in discussed]
        if fresh and rng.random() < 0.7:
            t = rng.choice(fresh)
            discussed.add(t)
            parts.append(question(rng, t))
            pending = t
        else:
            mine = [t for t in me if t not in discussed]
            if mine:
                t = rng.choice(mine)
                discussed.add(t)
                parts.append(statement(rng, t, me[t]))
        if rng.random() < 0.5:
            parts.insert(len(parts) - 1 if len(parts) > 1 else len(parts), anecdote(rng))
        turns.append(" ".join(parts).replace("  ", " ").strip())
    return people, turns


def write(path, n, seed):
    rng = random.Random(seed)
    lines = []
    for _ in range(n):
        (p1, p2), turns = dialogue(rng)
        num = 1
        for t, v in p2.items():
            lines.append(f"{num} your persona: {persona_line(t, v)}")
            num += 1
        for t, v in p1.items():
            lines.append(f"{num} partner's persona: {persona_line(t, v)}")
            num += 1
        for a, b in zip(turns[0::2], turns[1::2]):
            lines.append(f"{num} {a}\t{b}")
            num += 1
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


if __name__ == "__main__":
    here = os.path.dirname(os.path.abspath(__file__))
    write(os.path.join(here, "train.txt"), 150, 1)
    write(os.path.join(here, "valid.txt"), 10, 2)
    write(os.path.join(here, "test.txt"), 10, 3)
