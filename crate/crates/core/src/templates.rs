//! Prompt templates for the four operator tasks and a deterministic responder.
//!
//! Templates are `task_id<TAB>template` lines, each with exactly one
//! `#placeholder#`, which is replaced by the description of the predicted class.

use std::fmt;
use std::str::FromStr;

use crate::alignment::FaultDescriptionSet;
use crate::fcn::{FaultLabel, Location, Severity};
use crate::{Error, Result};

pub const PLACEHOLDER: &str = "#placeholder#";
pub const STANDARD_TEMPLATES: &str = include_str!("../assets/templates.tsv");
pub const STANDARD_DESCRIPTIONS: &str = include_str!("../assets/fault_descriptions.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    /// Anomaly detection.
    A,
    /// Fault diagnosis.
    B,
    /// Maintenance recommendation.
    C,
    /// Risk analysis.
    D,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::A, Task::B, Task::C, Task::D];

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self)
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Task::A),
            "B" => Ok(Task::B),
            "C" => Ok(Task::C),
            "D" => Ok(Task::D),
            other => Err(Error::Config(format!("unknown task '{other}', expected A-D"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResponseTemplateSet {
    prompts: [String; 4],
    pub descriptions: FaultDescriptionSet,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub prompt: String,
    pub answer: String,
}

impl ResponseTemplateSet {
    pub fn parse(templates: &str, descriptions: FaultDescriptionSet) -> Result<Self> {
        let mut prompts: [Option<String>; 4] = Default::default();
        for line in templates.lines().filter(|l| !l.trim().is_empty()) {
            let (id, text) = line
                .split_once('\t')
                .ok_or_else(|| Error::Config(format!("template line without a tab: {line}")))?;
            let task: Task = id.parse()?;
            if text.matches(PLACEHOLDER).count() != 1 {
                return Err(Error::Config(format!(
                    "template {task} must contain exactly one {PLACEHOLDER}"
                )));
            }
            if prompts[task.index()].replace(text.to_string()).is_some() {
                return Err(Error::Config(format!("template {task} defined twice")));
            }
        }
        let missing: Vec<String> = Task::ALL
            .iter()
            .filter(|t| prompts[t.index()].is_none())
            .map(|t| t.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(Error::Config(format!("templates missing for {}", missing.join(","))));
        }
        Ok(Self {
            prompts: prompts.map(|p| p.unwrap()),
            descriptions,
        })
    }

    pub fn standard() -> Self {
        let d = FaultDescriptionSet::parse(STANDARD_DESCRIPTIONS).expect("bundled descriptions");
        Self::parse(STANDARD_TEMPLATES, d).expect("bundled templates")
    }

    pub fn template(&self, task: Task) -> &str {
        &self.prompts[task.index()]
    }

    /// Fills the prompt for `label` and answers it from the label alone.
    pub fn respond(&self, task: Task, label: FaultLabel) -> Result<Response> {
        let desc = self.descriptions.texts().get(label.index()).ok_or(Error::Label {
            label: label.index(),
            classes: self.descriptions.len(),
        })?;
        let prompt = self.template(task).replace(PLACEHOLDER, desc);
        let answer = match (task, label.location(), label.severity()) {
            (Task::A, None, _) => "no".to_string(),
            (Task::A, Some(_), _) => "yes".to_string(),
            (Task::B, None, _) => "The bearing is normal; no fault is present.".to_string(),
            (Task::B, Some(l), Some(s)) => format!("{} {} fault.", capitalize(s.name()), fault_name(l)),
            (Task::C, None, _) => {
                "The bearing is in normal condition. Continue routine monitoring and lubrication."
                    .to_string()
            }
            (Task::C, Some(l), Some(s)) => format!(
                "The bearing has a {} {} fault. {}",
                s.name(),
                fault_name(l),
                maintenance(s)
            ),
            (Task::D, None, _) => {
                "No elevated risk: the bearing is operating normally.".to_string()
            }
            (Task::D, Some(l), Some(s)) => format!(
                "A {} {} fault {}",
                s.name(),
                fault_name(l),
                risk(s)
            ),
            _ => unreachable!("faulty labels carry a severity"),
        };
        Ok(Response { prompt, answer })
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next()
        .map(|f| f.to_uppercase().collect::<String>() + c.as_str())
        .unwrap_or_default()
}

fn fault_name(l: Location) -> &'static str {
    match l {
        Location::Inner => "inner ring",
        Location::Ball => "ball",
        Location::Outer => "outer ring",
    }
}

fn maintenance(s: Severity) -> &'static str {
    match s {
        Severity::Minor => "Shorten the inspection interval and check lubrication at the next planned stop.",
        Severity::Moderate => "Plan a bearing replacement soon and check alignment and lubrication meanwhile.",
        Severity::Severe => "Stop the machine as soon as possible and replace the bearing.",
    }
}

fn risk(s: Severity) -> &'static str {
    match s {
        Severity::Minor => "raises vibration and noise slightly; it will grow if left unattended.",
        Severity::Moderate => "causes heating and accelerated wear and may spread to adjacent parts.",
        Severity::Severe => "can seize the bearing or break the shaft; shut down and replace it now.",
    }
}
