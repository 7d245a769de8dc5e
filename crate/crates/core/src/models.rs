//! The two Phillips-curve designs: a pandemic slope shift and a tightness
//! threshold.

use serde::{Deserialize, Serialize};

use crate::fe::DesignSpec;
use crate::forge::{interaction_name, PANDEMIC, PI, REL_P_LAG, SHIFT_SHARE, SLACK, TIGHT};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    /// Slope shifts from the pandemic onset on.
    PandemicShift,
    /// Slope shifts when tightness exceeds the threshold.
    Threshold,
}

impl Model {
    pub fn from_number(n: u8) -> Option<Model> {
        match n {
            1 => Some(Model::PandemicShift),
            2 => Some(Model::Threshold),
            _ => None,
        }
    }

    pub fn number(self) -> u8 {
        match self {
            Model::PandemicShift => 1,
            Model::Threshold => 2,
        }
    }

    pub fn regime_column(self) -> &'static str {
        match self {
            Model::PandemicShift => PANDEMIC,
            Model::Threshold => TIGHT,
        }
    }

    /// Slack interacted with the regime indicator.
    pub fn interaction(self) -> String {
        interaction_name(SLACK, self.regime_column())
    }

    pub fn instrument_interaction(self) -> String {
        interaction_name(SHIFT_SHARE, self.regime_column())
    }

    /// Two-way FE 2SLS: inflation on slack and its regime interaction, both
    /// instrumented by the shift-share instrument and its interaction, with
    /// the lagged relative price as control.
    pub fn design(self) -> DesignSpec {
        let inter = self.interaction();
        let z_inter = self.instrument_interaction();
        let mut spec = DesignSpec::iv(PI, &[REL_P_LAG], &[SLACK, &inter], &[SHIFT_SHARE, &z_inter]);
        spec.wu_hausman = true;
        spec
    }

    /// Coefficient names in report order: base slope, interaction, control.
    pub fn params(self) -> [String; 3] {
        [SLACK.to_string(), self.interaction(), REL_P_LAG.to_string()]
    }
}

impl std::fmt::Display for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Model::PandemicShift => f.write_str("Model I (interaction with pandemic)"),
            Model::Threshold => f.write_str("Model II (interaction with market tightness)"),
        }
    }
}
