"""shared fixtures: parses written as `form/deprel/head` with 1-based heads"""
from contextlib import contextmanager
import os
import shutil
import tempfile

from rcprobe.extraction import ParsedSentence, Token, extract_records

NO_SPACE_BEFORE = (',', '.')

# (animate, restrictive, subjrc) -> parse
PARADIGM = {
    (True, True, True):
        'The/det/2 woman/nsubj/6 who/nsubj/4 sought/relcl/2 help/obj/4 left/root/0 ./punct/6',
    (True, True, False):
        'The/det/2 man/nsubj/6 whom/obj/5 we/nsubj/5 met/relcl/2 smiled/root/0 ./punct/6',
    (True, False, True):
        'Katrina/nsubj/8 Haus/flat/1 ,/punct/5 who/nsubj/5 sought/relcl/1 help/obj/5 ,/punct/5 '
        'left/root/0 ./punct/8',
    (True, False, False):
        'Anna/nsubj/7 ,/punct/5 whom/obj/5 we/nsubj/5 met/relcl/1 ,/punct/5 smiled/root/0 ./punct/7',
    (False, True, True):
        'The/det/2 road/nsubj/6 which/nsubj/4 leads/relcl/2 home/advmod/4 closed/root/0 ./punct/6',
    (False, True, False):
        'The/det/2 book/nsubj/6 which/obj/5 she/nsubj/5 wrote/relcl/2 sold/root/0 ./punct/6',
    (False, False, True):
        'The/det/2 river/nsubj/8 ,/punct/5 which/nsubj/5 flows/relcl/2 south/advmod/5 ,/punct/5 '
        'froze/root/0 ./punct/8',
    (False, False, False):
        'The/det/2 house/nsubj/8 ,/punct/6 which/obj/6 we/nsubj/6 bought/relcl/2 ,/punct/6 '
        'burned/root/0 ./punct/8',
}

THAT_ANIMATE = 'The/det/2 woman/nsubj/6 that/nsubj/4 helped/relcl/2 us/obj/4 left/root/0 ./punct/6'
THAT_UNKNOWN = 'The/det/2 plan/nsubj/6 that/nsubj/4 failed/relcl/2 badly/advmod/4 ended/root/0 ./punct/6'
NO_PRONOUN = 'The/det/2 cat/nsubj/3 sat/root/0 ./punct/3'
NO_RELCL = 'I/nsubj/2 think/root/0 that/mark/5 he/nsubj/5 left/ccomp/2 ./punct/2'
OBLIQUE = 'The/det/2 box/nsubj/7 in/case/4 which/obl/6 we/nsubj/6 sleep/relcl/2 broke/root/0 ./punct/7'


def rows(notation):
    """[(form, deprel, head)]"""
    result = []
    for item in notation.split():
        form, deprel, head = item.rsplit('/', 2)
        result.append((form, deprel, int(head)))
    return result


def text_of(notation):
    text = ''
    for form, _deprel, _head in rows(notation):
        if text and form not in NO_SPACE_BEFORE:
            text += ' '
        text += form
    return text


def parsed(notation):
    text = text_of(notation)
    tokens, cursor = [], 0
    for form, deprel, head in rows(notation):
        start = text.index(form, cursor)
        cursor = start + len(form)
        tokens.append(Token(form, form.lower(), head - 1 if head else None, deprel, (start, cursor)))
    return ParsedSentence(text, tuple(tokens))


def conllu_block(notation, with_text=True):
    lines = ['# text = ' + text_of(notation)] if with_text else []
    items = rows(notation)
    for i, (form, deprel, head) in enumerate(items, 1):
        space = 'SpaceAfter=No' if i < len(items) and items[i][0] in NO_SPACE_BEFORE else '_'
        lines.append('\t'.join([
            str(i), form, form.lower(), '_', '_', '_', str(head), deprel, '_', space]))
    return '\n'.join(lines) + '\n\n'


def fixture_sentences(extra=()):
    """(ordinal, parse) pairs of the paradigm fixture in a fixed order"""
    notations = list(PARADIGM.values()) + list(extra)
    return [(i, parsed(n)) for i, n in enumerate(notations, 1)]


def fixture_records(extra=()):
    records, _lists, _stats = extract_records(fixture_sentences(extra))
    return records


def record_for(triple):
    """the extracted fixture record of one triple"""
    wanted = text_of(PARADIGM[triple])
    return next(r for r in fixture_records() if r.text == wanted)


@contextmanager
def temp_dir():
    path = tempfile.mkdtemp(prefix='rcprobe-test-')
    try:
        yield path
    finally:
        shutil.rmtree(path)


def write_file(directory, name, content):
    path = os.path.join(directory, name)
    with open(path, 'w', encoding='utf-8') as f:
        f.write(content)
    return path
