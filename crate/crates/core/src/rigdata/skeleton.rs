use std::collections::HashMap;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Joint count of the game-engine rig: 29 body joints and 40 finger joints.
pub const TEMPLATE_JOINT_COUNT: usize = 69;
pub const TEMPLATE_BODY_JOINTS: usize = 29;
pub const TEMPLATE_FINGER_JOINTS: usize = 40;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Head,
    Neck,
    Shoulder,
    Spine,
    Hips,
    Elbow,
    Wrist,
    Knee,
    Foot,
    Finger,
}

impl Category {
    pub fn is_finger(self) -> bool {
        self == Category::Finger
    }
}

/// Name, parent name and category of one template joint.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointSpec {
    pub name: String,
    pub parent: Option<String>,
    pub category: Category,
}

const BODY: [(&str, Option<&str>, Category); 11] = [
    ("root", None, Category::Hips),
    ("pelvis", Some("root"), Category::Hips),
    ("spine_01", Some("pelvis"), Category::Spine),
    ("spine_02", Some("spine_01"), Category::Spine),
    ("spine_03", Some("spine_02"), Category::Spine),
    ("spine_04", Some("spine_03"), Category::Spine),
    ("spine_05", Some("spine_04"), Category::Spine),
    ("neck_01", Some("spine_05"), Category::Neck),
    ("neck_02", Some("neck_01"), Category::Neck),
    ("head", Some("neck_02"), Category::Head),
    ("head_end", Some("head"), Category::Head),
];

pub const FINGERS: [&str; 5] = ["thumb", "index", "middle", "ring", "pinky"];
const FINGER_SEGMENTS: [&str; 4] = ["01", "02", "03", "end"];

/// The 69-joint template in canonical order: trunk, then per side arm and
/// leg, then per side the fingers. Parents always precede children.
pub fn template() -> Vec<JointSpec> {
    let spec = |name: &str, parent: Option<&str>, category| JointSpec {
        name: name.to_string(),
        parent: parent.map(str::to_string),
        category,
    };
    let mut out: Vec<JointSpec> = BODY.iter().map(|(n, p, c)| spec(n, *p, *c)).collect();
    for side in ["l", "r"] {
        let arm = [
            ("clavicle", "spine_05".to_string(), Category::Shoulder),
            ("upperarm", format!("clavicle_{side}"), Category::Shoulder),
            ("lowerarm", format!("upperarm_{side}"), Category::Elbow),
            ("hand", format!("lowerarm_{side}"), Category::Wrist),
        ];
        for (n, p, c) in arm {
            out.push(spec(&format!("{n}_{side}"), Some(&p), c));
        }
        let leg = [
            ("thigh", "pelvis".to_string(), Category::Hips),
            ("calf", format!("thigh_{side}"), Category::Knee),
            ("foot", format!("calf_{side}"), Category::Foot),
            ("ball", format!("foot_{side}"), Category::Foot),
            ("toe_end", format!("ball_{side}"), Category::Foot),
        ];
        for (n, p, c) in leg {
            out.push(spec(&format!("{n}_{side}"), Some(&p), c));
        }
    }
    for side in ["l", "r"] {
        for finger in FINGERS {
            let mut parent = format!("hand_{side}");
            for seg in FINGER_SEGMENTS {
                let name = format!("{finger}_{seg}_{side}");
                out.push(spec(&name, Some(&parent), Category::Finger));
                parent = name;
            }
        }
    }
    out
}

/// One joint of a posed skeleton. `head` is the joint position; `tail` is
/// the end of the bone that starts at this joint.
#[derive(Clone, Debug, PartialEq)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    pub head: Point3<f64>,
    pub tail: Point3<f64>,
    pub category: Category,
    pub leaf: bool,
}

/// Joint tree with one root. Parents precede their children, a joint's tail
/// is the head of its first child, and childless (leaf) joints have
/// `tail == head`.
#[derive(Clone, Debug, PartialEq)]
pub struct Skeleton {
    joints: Vec<Joint>,
    children: Vec<Vec<usize>>,
}

const TAIL_TOLERANCE: f64 = 1e-9;

impl Skeleton {
    pub fn new(joints: Vec<Joint>) -> Result<Self> {
        let n = joints.len();
        if n == 0 {
            return Err(CoreError::Data("skeleton has no joints".into()));
        }
        let roots: Vec<&str> = joints
            .iter()
            .filter(|j| j.parent.is_none())
            .map(|j| j.name.as_str())
            .collect();
        if roots.len() != 1 {
            return Err(CoreError::Data(format!(
                "skeleton must have exactly one root, found {}: {roots:?}",
                roots.len()
            )));
        }
        let mut names = HashMap::new();
        let mut children = vec![Vec::new(); n];
        for (i, j) in joints.iter().enumerate() {
            if names.insert(j.name.as_str(), i).is_some() {
                return Err(CoreError::Data(format!("duplicate joint name '{}'", j.name)));
            }
            if !j.head.iter().chain(j.tail.iter()).all(|c| c.is_finite()) {
                return Err(CoreError::Data(format!("joint '{}' has non-finite coordinates", j.name)));
            }
            if let Some(p) = j.parent {
                if p >= i {
                    return Err(CoreError::Data(format!(
                        "joint '{}' must come after its parent",
                        j.name
                    )));
                }
                children[p].push(i);
            }
        }
        for (i, j) in joints.iter().enumerate() {
            if j.leaf != children[i].is_empty() {
                return Err(CoreError::Data(format!(
                    "joint '{}' leaf flag is {} but it has {} children",
                    j.name,
                    j.leaf,
                    children[i].len()
                )));
            }
            let expected = children[i].first().map_or(j.head, |&c| joints[c].head);
            let scale = 1.0 + expected.coords.amax();
            if (j.tail - expected).norm() > TAIL_TOLERANCE * scale {
                return Err(CoreError::Data(format!(
                    "tail of joint '{}' does not match its first child's head",
                    j.name
                )));
            }
        }
        Ok(Skeleton { joints, children })
    }

    /// Skeleton for the given hierarchy and joint positions, deriving tails
    /// and leaf flags.
    pub fn from_positions(specs: &[JointSpec], heads: &[Point3<f64>]) -> Result<Self> {
        if specs.len() != heads.len() {
            return Err(CoreError::Contract(format!(
                "{} joint specs for {} positions",
                specs.len(),
                heads.len()
            )));
        }
        let index: HashMap<&str, usize> = specs
            .iter()
            .enumerate()
            .map(|(i, s)| (s.name.as_str(), i))
            .collect();
        let mut parents = Vec::with_capacity(specs.len());
        for s in specs {
            parents.push(match &s.parent {
                None => None,
                Some(p) => Some(*index.get(p.as_str()).ok_or_else(|| {
                    CoreError::Data(format!("joint '{}' has unknown parent '{p}'", s.name))
                })?),
            });
        }
        let mut first_child: Vec<Option<usize>> = vec![None; specs.len()];
        for (i, p) in parents.iter().enumerate() {
            if let Some(p) = *p {
                first_child[p].get_or_insert(i);
            }
        }
        let joints = specs
            .iter()
            .enumerate()
            .map(|(i, s)| Joint {
                name: s.name.clone(),
                parent: parents[i],
                head: heads[i],
                tail: first_child[i].map_or(heads[i], |c| heads[c]),
                category: s.category,
                leaf: first_child[i].is_none(),
            })
            .collect();
        Skeleton::new(joints)
    }

    /// Same hierarchy with new joint positions.
    pub fn with_positions(&self, heads: &[Point3<f64>]) -> Result<Self> {
        Skeleton::from_positions(&self.specs(), heads)
    }

    pub fn specs(&self) -> Vec<JointSpec> {
        self.joints
            .iter()
            .map(|j| JointSpec {
                name: j.name.clone(),
                parent: j.parent.map(|p| self.joints[p].name.clone()),
                category: j.category,
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn joint(&self, i: usize) -> &Joint {
        &self.joints[i]
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn positions(&self) -> Vec<Point3<f64>> {
        self.joints.iter().map(|j| j.head).collect()
    }

    pub fn categories(&self) -> Vec<Category> {
        self.joints.iter().map(|j| j.category).collect()
    }

    /// `(parent, child)` for every non-root joint, in child order.
    pub fn bones(&self) -> Vec<(usize, usize)> {
        self.joints
            .iter()
            .enumerate()
            .filter_map(|(i, j)| j.parent.map(|p| (p, i)))
            .collect()
    }

    /// Bones that end in a childless joint.
    pub fn leaf_bones(&self) -> Vec<(usize, usize)> {
        self.bones()
            .into_iter()
            .filter(|&(_, c)| self.joints[c].leaf)
            .collect()
    }

    /// Checks the joint names and hierarchy against a manifest joint list.
    pub fn check_against(&self, specs: &[JointSpec]) -> Result<()> {
        if specs.len() != self.len() {
            return Err(CoreError::Data(format!(
                "skeleton has {} joints, manifest lists {}",
                self.len(),
                specs.len()
            )));
        }
        for (mine, theirs) in self.specs().iter().zip(specs) {
            if mine != theirs {
                return Err(CoreError::Data(format!(
                    "joint '{}' does not match manifest entry '{}'",
                    mine.name, theirs.name
                )));
            }
        }
        Ok(())
    }
}
