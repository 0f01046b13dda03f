"""Bundled benchmark scenarios.

Hand-sized instances with known-good structure, used by the experiment
scripts and the acceptance suite.  They are deliberately small enough that
every solve certifies optimal in seconds on one core while still exercising
the interesting structure: time-of-use windows, charger contention, and
battery dynamics near the CC-CV threshold.
"""

from .scenario import Bus, ChargerType, Scenario, ScheduleBlock

__all__ = ["four_bus_day"]


def four_bus_day() -> Scenario:
    """Four buses, two charger types, day 05:00-10:00.

    Each bus drives a morning leg, takes one 45-minute depot visit, and
    drives a second leg; visits are staggered by 30 minutes so at most two
    buses compete for the 2 fast + 1 slow charger units at a time.  The
    earlier visits fall inside the 06:00-09:00 on-peak window, so cheap
    schedules must trade TOU demand charges against contention.  Drains are
    symmetric (70-72 kWh against a 130 kWh starting level), leaving roughly
    20 kWh of margin above the minimum-level floor for disturbances.
    """

    def tour(bus_id: str, visit_start: int, power: float) -> Bus:
        return Bus(
            id=bus_id,
            capacity_kwh=200.0,
            eta=0.85,
            initial_soc=0.65,
            final_soc=0.65,
            min_soc=0.3,
            max_soc=0.95,
            schedule=(
                ScheduleBlock("on_route", 300, visit_start,
                              route_power_kw=power),
                ScheduleBlock("in_station", visit_start, visit_start + 45,
                              charger_type_ids=("fast", "slow")),
                ScheduleBlock("on_route", visit_start + 45, visit_start + 120,
                              route_power_kw=power),
            ),
        )

    return Scenario(
        day_start_min=300,
        day_end_min=600,
        buses=(
            tour("b1", 375, 28.0),
            tour("b2", 405, 24.0),
            tour("b3", 435, 20.0),
            tour("b4", 465, 18.0),
        ),
        charger_types=(
            ChargerType("fast", 2, 120.0, 2.0, "depot"),
            ChargerType("slow", 1, 40.0, 1.0, "depot"),
        ),
    )
