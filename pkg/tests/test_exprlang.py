import pytest

from promptgp.chunking import ViewIndex
from promptgp.exprlang import (
    Atom,
    Call,
    Concat,
    ProgramParseError,
    iter_index_slots,
    parse,
    render,
    replace_index_slot,
)


def test_parse_atoms():
    assert parse("BASE") == Atom("BASE")
    assert parse("NULL") == Atom("NULL")
    assert parse("ICL_LIST") == Atom("ICL_LIST")


def test_parse_swap_with_slice():
    expr = parse("swap_elements(index1=[3], index2=[5,7], level=phrase, texts=BASE)")
    assert isinstance(expr, Call)
    assert expr.name == "swap_elements"
    assert expr.arg("index1") == ViewIndex("atomic", 3)
    assert expr.arg("index2") == ViewIndex("slice", 5, 7)
    assert expr.arg("level") == "phrase"
    assert expr.texts == Atom("BASE")


def test_render_is_byte_exact_canonical_surface():
    text = "swap_elements(index1=[3], index2=[5,7], level=phrase, texts=BASE)"
    assert render(parse(text)) == text


def test_parse_render_round_trip_all_ops():
    programs = [
        "swap_elements(index1=[0,1], index2=[3], level=word, texts=BASE)",
        "remove_element(index=[2], level=sentence, texts=BASE)",
        "readd_element(index=[4], level=phrase, texts=BASE)",
        "duplicate_element(index1=[1,2], index2=[0], level=word, texts=BASE)",
        "remove_stopwords(index=[0], level=sentence, texts=BASE)",
        "synonimise(index=[1,9], level=word, texts=BASE)",
        "paraphrase(index=[5], level=sentence, texts=BASE)",
        "summarise(percent=0.3, index=[2,2], level=phrase, texts=BASE)",
        "remove_element(index=[1], level=word, texts=readd_element(index=[0], level=word, texts=BASE))",
        "summarise(percent=0.5, index=[0], level=word, texts=BASE)+swap_elements(index1=[0], index2=[1], level=word, texts=ICL_LIST)",
    ]
    for text in programs:
        assert render(parse(text)) == text


def test_concat_parses_parts_in_order():
    expr = parse("BASE+ICL_LIST")
    assert isinstance(expr, Concat)
    assert expr.parts == (Atom("BASE"), Atom("ICL_LIST"))


def test_kwargs_must_follow_canonical_order():
    with pytest.raises(ProgramParseError):
        parse("swap_elements(index2=[5,7], index1=[3], level=phrase, texts=BASE)")
    with pytest.raises(ProgramParseError):
        parse("summarise(index=[2], percent=0.3, level=word, texts=BASE)")


def test_texts_argument_is_required_and_last():
    with pytest.raises(ProgramParseError):
        parse("remove_element(index=[2], level=word)")
    with pytest.raises(ProgramParseError):
        parse("remove_element(texts=BASE, index=[2], level=word)")


def test_atomic_only_parameters_reject_slices():
    with pytest.raises(ProgramParseError):
        parse("readd_element(index=[1,2], level=word, texts=BASE)")
    with pytest.raises(ProgramParseError):
        parse("duplicate_element(index1=[0], index2=[1,2], level=word, texts=BASE)")


def test_level_and_percent_validation():
    with pytest.raises(ProgramParseError):
        parse("remove_element(index=[0], level=paragraph, texts=BASE)")
    with pytest.raises(ProgramParseError):
        parse("summarise(percent=0.0, index=[0], level=word, texts=BASE)")
    with pytest.raises(ProgramParseError):
        parse("summarise(percent=1.5, index=[0], level=word, texts=BASE)")


def test_unknown_operator_rejected():
    with pytest.raises(ProgramParseError):
        parse("reverse_elements(index=[0], level=word, texts=BASE)")


def test_iter_index_slots_counts_and_order():
    expr = parse("swap_elements(index1=[3], index2=[5,7], level=phrase, texts=BASE)")
    slots = list(iter_index_slots(expr))
    assert [(s[1], s[2], s[3]) for s in slots] == [
        ("index1", 0, 3),
        ("index2", 0, 5),
        ("index2", 1, 7),
    ]


def test_iter_index_slots_nested_and_concat():
    expr = parse(
        "remove_element(index=[2], level=word, "
        "texts=readd_element(index=[4], level=word, texts=BASE))"
        "+swap_elements(index1=[0], index2=[1], level=word, texts=ICL_LIST)"
    )
    slots = list(iter_index_slots(expr))
    assert [s[3] for s in slots] == [2, 4, 0, 1]


def test_replace_index_slot_changes_exactly_one_digit():
    text = "swap_elements(index1=[3], index2=[5,7], level=phrase, texts=BASE)"
    expr = parse(text)
    path, key, slot, value = list(iter_index_slots(expr))[2]
    assert value == 7
    replaced = replace_index_slot(expr, path, key, slot, 9)
    assert render(replaced) == "swap_elements(index1=[3], index2=[5,9], level=phrase, texts=BASE)"
    assert render(expr) == text


def test_replace_index_slot_supports_values_beyond_digit_range():
    expr = parse("remove_element(index=[2], level=word, texts=BASE)")
    path, key, slot, _ = next(iter(iter_index_slots(expr)))
    replaced = replace_index_slot(expr, path, key, slot, 24)
    text = render(replaced)
    assert text == "remove_element(index=[24], level=word, texts=BASE)"
    assert render(parse(text)) == text


def test_empty_or_trailing_input_rejected():
    with pytest.raises(ProgramParseError):
        parse("")
    with pytest.raises(ProgramParseError):
        parse("BASE extra")
