use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::rigdata::skeleton::Category;

/// Report columns, in the order they are printed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ReportColumn {
    Body,
    Fingers,
    Head,
    Neck,
    Shoulder,
    Spine,
    Hips,
    Elbow,
    Wrist,
    Knee,
    Foot,
}

impl ReportColumn {
    pub const ALL: [ReportColumn; 11] = [
        ReportColumn::Body,
        ReportColumn::Fingers,
        ReportColumn::Head,
        ReportColumn::Neck,
        ReportColumn::Shoulder,
        ReportColumn::Spine,
        ReportColumn::Hips,
        ReportColumn::Elbow,
        ReportColumn::Wrist,
        ReportColumn::Knee,
        ReportColumn::Foot,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ReportColumn::Body => "Body",
            ReportColumn::Fingers => "Fingers",
            ReportColumn::Head => "Head",
            ReportColumn::Neck => "Neck",
            ReportColumn::Shoulder => "Shoulder",
            ReportColumn::Spine => "Spine",
            ReportColumn::Hips => "Hips",
            ReportColumn::Elbow => "Elbow",
            ReportColumn::Wrist => "Wrist",
            ReportColumn::Knee => "Knee",
            ReportColumn::Foot => "Foot",
        }
    }

    pub fn includes(self, category: Category) -> bool {
        match self {
            ReportColumn::Body => !category.is_finger(),
            ReportColumn::Fingers => category == Category::Finger,
            ReportColumn::Head => category == Category::Head,
            ReportColumn::Neck => category == Category::Neck,
            ReportColumn::Shoulder => category == Category::Shoulder,
            ReportColumn::Spine => category == Category::Spine,
            ReportColumn::Hips => category == Category::Hips,
            ReportColumn::Elbow => category == Category::Elbow,
            ReportColumn::Wrist => category == Category::Wrist,
            ReportColumn::Knee => category == Category::Knee,
            ReportColumn::Foot => category == Category::Foot,
        }
    }
}

/// Sum in ascending order, so the result does not depend on input order.
pub(crate) fn ordered_mean(mut values: Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    Some(values.into_iter().sum::<f64>() / n)
}

/// Joint errors in percent of model height.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    /// `samples × joints`, each `100·‖pred − gt‖`.
    pub per_joint: Vec<Vec<f64>>,
    pub categories: Vec<Category>,
    /// One entry per [`ReportColumn::ALL`]; `None` when no joint falls in
    /// the column.
    pub columns: Vec<(ReportColumn, Option<f64>)>,
}

impl MetricReport {
    pub fn column(&self, column: ReportColumn) -> Option<f64> {
        self.columns.iter().find(|(c, _)| *c == column).and_then(|(_, v)| *v)
    }

    /// Mean over every joint of every sample.
    pub fn overall(&self) -> f64 {
        ordered_mean(self.per_joint.iter().flatten().copied().collect()).unwrap_or(0.0)
    }
}

/// Per-joint error `100·‖p − g‖`, components summed x, y, z.
pub fn joint_error(pred: &Point3<f64>, gt: &Point3<f64>) -> f64 {
    let d = pred - gt;
    100.0 * (d.x * d.x + d.y * d.y + d.z * d.z).sqrt()
}

pub fn mpjpe(preds: &[Vec<Point3<f64>>], gts: &[Vec<Point3<f64>>], categories: &[Category]) -> Result<MetricReport> {
    if preds.len() != gts.len() {
        return Err(CoreError::Contract(format!(
            "{} predictions for {} ground-truth samples",
            preds.len(),
            gts.len()
        )));
    }
    let mut per_joint = Vec::with_capacity(preds.len());
    for (s, (p, g)) in preds.iter().zip(gts).enumerate() {
        if p.len() != g.len() {
            return Err(CoreError::Contract(format!(
                "sample {s}: {} predicted joints but {} ground-truth joints",
                p.len(),
                g.len()
            )));
        }
        if g.len() != categories.len() {
            return Err(CoreError::Data(format!(
                "sample {s} has {} joints but the category map covers {}",
                g.len(),
                categories.len()
            )));
        }
        per_joint.push(p.iter().zip(g).map(|(a, b)| joint_error(a, b)).collect::<Vec<f64>>());
    }
    let columns = ReportColumn::ALL
        .iter()
        .map(|&col| {
            let members: Vec<f64> = per_joint
                .iter()
                .flat_map(|row| {
                    row.iter()
                        .zip(categories)
                        .filter(|(_, c)| col.includes(**c))
                        .map(|(e, _)| *e)
                })
                .collect();
            (col, ordered_mean(members))
        })
        .collect();
    Ok(MetricReport {
        per_joint,
        categories: categories.to_vec(),
        columns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_centimetre_is_one_percent() {
        let g = vec![vec![Point3::new(0.0, 0.0, 0.0)]];
        let p = vec![vec![Point3::new(0.01, 0.0, 0.0)]];
        let r = mpjpe(&p, &g, &[Category::Head]).unwrap();
        assert!((r.column(ReportColumn::Head).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(r.column(ReportColumn::Fingers), None);
    }

    #[test]
    fn missing_categories_are_data_errors() {
        let g = vec![vec![Point3::origin(); 2]];
        assert!(matches!(mpjpe(&g, &g, &[Category::Head]), Err(CoreError::Data(_))));
    }
}
