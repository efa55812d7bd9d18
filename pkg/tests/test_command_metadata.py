import pytest

from cli.command_metadata import (
    VALID_COSTS,
    VALID_SECTIONS,
    Subcommand,
    cost,
    get_help_metadata,
    help_metadata,
    subcommand,
)


def make_command(registry, name="sample"):
    def handler(cfg, ctx):
        """Sample brief line.

        Longer text that is not part of the brief.
        """
        return (cfg, ctx)

    return subcommand(name, registry=registry)(handler)


def test_subcommand_registers_and_stays_callable():
    registry = {}
    cmd = make_command(registry)
    assert registry == {"sample": cmd}
    assert isinstance(cmd, Subcommand)
    assert cmd.brief == "Sample brief line."
    assert cmd(1, 2) == (1, 2)


def test_duplicate_name_raises():
    registry = {}
    make_command(registry)
    with pytest.raises(ValueError, match="already registered"):
        make_command(registry)


@pytest.mark.parametrize("value", sorted(VALID_COSTS))
def test_cost_stores_extras(value):
    cmd = cost(value)(make_command({}))
    assert cmd.extras["cost"] == value


def test_invalid_cost_raises_clearly():
    with pytest.raises(ValueError, match="Invalid cost"):
        cost("forever")


def test_help_metadata_stores_expected_fields():
    cmd = help_metadata(section="verify", usage="crem_sim.py sample", flags=["no-simulation"])(cost("desk")(make_command({})))
    assert get_help_metadata(cmd) == {
        "help_section": "verify",
        "help_usage": "crem_sim.py sample",
        "outputs": ("results.csv", "verdicts.json", "provenance.json"),
        "help_flags": ("no-simulation",),
        "cost": "desk",
    }


@pytest.mark.parametrize("section", sorted(VALID_SECTIONS))
def test_every_section_is_accepted(section):
    cmd = help_metadata(section=section)(make_command({}))
    assert cmd.extras["help_section"] == section


def test_invalid_section_and_output_raise_clearly():
    with pytest.raises(ValueError, match="Invalid section"):
        help_metadata(section="admin")
    with pytest.raises(ValueError, match="Invalid output"):
        help_metadata(section="verify", outputs=["plot.png"])


def test_flags_normalize_to_stable_tuple_of_strings():
    cmd = help_metadata(section="inspect", flags=["b", 7])(make_command({}))
    assert cmd.extras["help_flags"] == ("b", "7")
    with pytest.raises(ValueError):
        help_metadata(section="inspect", flags=[""])


def test_metadata_decorators_require_subcommand_order():
    def bare(cfg, ctx):
        return None

    with pytest.raises(TypeError, match="above @subcommand"):
        cost("instant")(bare)
    with pytest.raises(TypeError, match="above @subcommand"):
        help_metadata(section="verify")(bare)
    with pytest.raises(TypeError):
        get_help_metadata(bare)
