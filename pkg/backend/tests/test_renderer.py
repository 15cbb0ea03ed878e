from services.renderer import render_text, render_svg, render_state, run_table, product_colors
from services.schedule_builder import with_costs
from services.verifier import state_at


def test_run_table(nominal_schedule):
    table = run_table(nominal_schedule)
    assert len(table) == 9
    assert list(table['Start'][:3]) == ['0.00', '8.33', '25.00']
    assert table['End'].iloc[-1] == '175.00'
    assert table['Injections'].iloc[2] == 'S1 40.00 A->B5; S2 40.00 C->B3'


def test_text_gantt(nominal_schedule):
    text = render_text(nominal_schedule)
    assert text.startswith('Schedule for case_study\n')
    assert 'Makespan: 175.00 h over 9 runs' in text
    assert 'Cost: interface 178.00, pumping 8175.00, backorder 0.00, total 8353.00' in text
    assert 'Backorder:' not in text


def test_text_gantt_lists_backorders(nominal_schedule, case_study):
    short = with_costs(nominal_schedule.with_changes(runs=nominal_schedule.runs[:-1]), case_study)
    text = render_text(short)
    assert 'Backorder: 20.00 of B at D3' in text
    assert 'Backorder: 20.00 of C at D2' in text


def test_state_line(nominal_schedule, case_study):
    line = render_state(state_at(nominal_schedule, case_study, 100.0))
    assert line == 't=100.00 h  N4:B[0.00-30.00] B5:A[30.00-40.00] B4:B[40.00-80.00]'


def test_svg_is_deterministic(nominal_schedule, case_study):
    first = render_svg(nominal_schedule, case_study)
    second = render_svg(nominal_schedule, case_study)
    assert first == second
    assert '<svg' in first
    assert '141.67-175.00' in first


def test_svg_without_scenario(nominal_schedule):
    assert '<svg' in render_svg(nominal_schedule)


def test_product_colors_are_stable():
    assert product_colors(['A', 'B', 'C']) == product_colors(['A', 'B', 'C'])
    assert len(set(product_colors(['A', 'B', 'C']).values())) == 3
