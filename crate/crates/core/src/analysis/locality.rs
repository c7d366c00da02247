use crate::error::Result;
use crate::scan_curves::{CurveSpec, LocalityProfile, ScanSet};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalityRow {
    pub curve: CurveSpec,
    pub profile: LocalityProfile,
}

/// Locality profile of every curve in `set` at `height × width`.
pub fn locality_report(set: &ScanSet, height: usize, width: usize) -> Result<Vec<LocalityRow>> {
    set.curves()
        .into_iter()
        .map(|curve| {
            Ok(LocalityRow {
                curve,
                profile: curve.build(height, width)?.locality_profile(),
            })
        })
        .collect()
}

pub fn locality_csv(rows: &[LocalityRow]) -> String {
    let mut s = String::from("curve,pairs,mean_1d_distance,max_1d_distance\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{}\n",
            r.curve, r.profile.pairs, r.profile.mean_1d_distance, r.profile.max_1d_distance
        ));
    }
    s
}
