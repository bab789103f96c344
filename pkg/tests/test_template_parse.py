"""Parsing: document subset, section model, canonical round-trip."""

import pytest

from minimano import yamlite
from minimano.errors import TemplateError, TemplateSyntaxError
from minimano.hot import (
    GetAttr,
    GetParam,
    Literal,
    ListOf,
    MapOf,
    StrReplace,
    parse_template,
    serialize_template,
)


def read(templates_dir, name):
    return (templates_dir / name).read_text()


def test_example1_structure(templates_dir):
    doc = parse_template(read(templates_dir, "example1.yaml"))
    assert doc.version == "2013-05-23"
    assert doc.description == "Simple template to deploy a single compute instance"
    assert list(doc.resources) == ["my_instance"]
    inst = doc.resources["my_instance"]
    assert inst.resource_type == "OS::Nova::Server"
    assert inst.properties["image"] == Literal("ubuntu_cloud14")
    assert inst.properties["flavor"] == Literal("m1.small")
    assert inst.properties["key_name"] == Literal("my_key1")
    networks = inst.properties["networks"]
    assert networks == ListOf((MapOf((("network", Literal("my_net1")),)),))
    assert doc.parameters == {}
    assert doc.outputs == {}


def test_example2_structure(templates_dir):
    doc = parse_template(read(templates_dir, "example2.yaml"))
    assert list(doc.parameters) == ["image", "flavor", "key", "private_network"]
    for pdef in doc.parameters.values():
        assert pdef.type == "string"
        assert pdef.has_default
    assert doc.parameters["image"].default == "ubuntu_cloud14"
    assert doc.parameters["flavor"].default == "m1.small"
    assert doc.parameters["key"].default == "my_key1"
    assert doc.parameters["private_network"].default == "my_net1"
    assert list(doc.resources) == ["my_instance"]
    assert doc.resources["my_instance"].properties["image"] == GetParam("image")
    assert list(doc.outputs) == ["instance_ip"]
    assert doc.outputs["instance_ip"].value == GetAttr("my_instance", "first_address")


def test_missing_version_is_rejected():
    src = "resources:\n  a:\n    type: OS::Heat::RandomString\n"
    with pytest.raises(TemplateError, match="heat_template_version"):
        parse_template(src)


def test_empty_resources_rejected():
    with pytest.raises(TemplateError, match="at least one resource"):
        parse_template("heat_template_version: 2013-05-23\n")
    with pytest.raises(TemplateError, match="at least one resource"):
        parse_template("heat_template_version: 2013-05-23\nresources:\n")


def test_resource_requires_type():
    src = (
        "heat_template_version: 2013-05-23\n"
        "resources:\n"
        "  a:\n"
        "    properties:\n"
        "      length: 4\n"
    )
    with pytest.raises(TemplateError, match="must have a type"):
        parse_template(src)


def test_unknown_top_level_key_is_warning_not_error():
    src = (
        "heat_template_version: 2013-05-23\n"
        "conditions: {}\n"
        "resources:\n"
        "  a:\n"
        "    type: OS::Heat::RandomString\n"
    )
    doc = parse_template(src)
    assert any("conditions" in w for w in doc.warnings)


def test_get_pattr_normalized_with_warning():
    src = (
        "heat_template_version: 2013-05-23\n"
        "resources:\n"
        "  a:\n"
        "    type: OS::Heat::RandomString\n"
        "outputs:\n"
        "  v:\n"
        "    value: { get_pattr: [a, value] }\n"
    )
    doc = parse_template(src)
    assert doc.outputs["v"].value == GetAttr("a", "value")
    assert any("get_pattr" in w for w in doc.warnings)


def test_user_data_literal_block_is_verbatim(templates_dir):
    doc = parse_template(read(templates_dir, "example3.yaml"))
    simple = doc.resources["inst_simple"].properties["user_data"]
    assert simple == Literal('#!/bin/sh\necho "Hello, World!" >> hello.txt\n')
    advanced = doc.resources["inst_advanced"].properties["user_data"]
    assert isinstance(advanced, StrReplace)
    assert advanced.template == (
        '#!/bin/sh\n'
        'echo "Hello, my name is __name__. Here is a random number: __rnum__." >> hello.txt\n'
    )
    markers = advanced.params_map
    assert markers["__name__"] == GetParam("name")
    assert markers["__rnum__"] == GetAttr("rng", "value")


def test_syntax_error_is_position_annotated():
    with pytest.raises(TemplateSyntaxError) as err:
        parse_template("heat_template_version: 2013-05-23\nresources:\n  a: { type: ][ }\n")
    assert err.value.line == 3


def test_duplicate_resource_names_rejected():
    src = (
        "heat_template_version: 2013-05-23\n"
        "resources:\n"
        "  a:\n"
        "    type: OS::Heat::RandomString\n"
        "  a:\n"
        "    type: OS::Heat::RandomString\n"
    )
    with pytest.raises(TemplateSyntaxError, match="duplicate key"):
        parse_template(src)


@pytest.mark.parametrize(
    "snippet, message",
    [
        ("key: &anchor x\n", "may not start with"),
        ("key: *alias\n", "may not start with"),
        ("key: !!str x\n", "may not start with"),
        ("--- \nkey: x\n", "multi-document"),
        ("%YAML 1.1\nkey: x\n", "directives"),
        ("key: >\n  folded\n", "unsupported block scalar"),
        ("key: { a: { b: c } }\n", "nested flow"),
        ("\tkey: x\n", "tab"),
    ],
)
def test_rejected_syntax(snippet, message):
    with pytest.raises(TemplateSyntaxError, match=message):
        yamlite.parse(snippet)


def test_yamlite_scalars():
    parsed = yamlite.parse(
        "a: 4\nb: 0.8\nc: true\nd: false\ne: null\nf: 2013-05-23\ng: \"quoted: text\"\nh: plain text\n"
    )
    assert parsed == {
        "a": 4,
        "b": 0.8,
        "c": True,
        "d": False,
        "e": None,
        "f": "2013-05-23",
        "g": "quoted: text",
        "h": "plain text",
    }


def test_yamlite_comments_and_blank_lines():
    parsed = yamlite.parse(
        "# leading comment\n"
        "a: 1  # trailing\n"
        "\n"
        "b:\n"
        "  - x\n"
        "  - y: 2\n"
    )
    assert parsed == {"a": 1, "b": ["x", {"y": 2}]}


@pytest.mark.parametrize("name", ["example1.yaml", "example2.yaml", "example3.yaml", "example4.yaml", "mysql.yaml", "wordpress.yaml"])
def test_round_trip_canonical_serialization(templates_dir, name):
    doc = parse_template(read(templates_dir, name))
    canonical = serialize_template(doc)
    again = parse_template(canonical)
    assert again == doc
    # canonical form is a fixed point
    assert serialize_template(again) == canonical


def test_round_trip_preserves_section_order(templates_dir):
    doc = parse_template(read(templates_dir, "example2.yaml"))
    again = parse_template(serialize_template(doc))
    assert list(again.parameters) == list(doc.parameters)
    assert list(again.resources) == list(doc.resources)
    assert list(again.outputs) == list(doc.outputs)


def _random_value(rng, depth):
    kinds = ["str", "int", "float", "bool", "none"]
    if depth < 3:
        kinds += ["dict", "list", "dict", "list"]
    kind = rng.choice(kinds)
    if kind == "dict":
        return {f"k{i}": _random_value(rng, depth + 1) for i in range(rng.randrange(0, 4))}
    if kind == "list":
        return [_random_value(rng, depth + 1) for _ in range(rng.randrange(0, 4))]
    if kind == "str":
        alphabet = "ab :#-_{}[]\"'\\\n\t|>&*x0."
        return "".join(rng.choice(alphabet) for _ in range(rng.randrange(0, 14)))
    if kind == "int":
        return rng.randrange(-1000, 1000)
    if kind == "float":
        return round(rng.uniform(-10, 10), 4)
    if kind == "bool":
        return rng.random() < 0.5
    return None


def test_dump_parse_round_trip_fuzz():
    import random

    rng = random.Random(12321)
    for _ in range(300):
        value = {f"top{i}": _random_value(rng, 0) for i in range(rng.randrange(1, 5))}
        assert yamlite.parse(yamlite.dump(value)) == value
