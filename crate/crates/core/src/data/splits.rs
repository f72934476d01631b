use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Parse(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Category {
    City,
    Road,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KittiDrive {
    pub id: String,
    pub category: Category,
    pub split: Split,
}

// (category, date, split, drive numbers)
const KITTI_TABLE: &[(Category, &str, Split, &[&str])] = &[
    (
        Category::City,
        "2011_09_26",
        Split::Train,
        &[
            "0002", "0005", "0009", "0011", "0013", "0014", "0048", "0051", "0056", "0059", "0084", "0091", "0095",
            "0096", "0104", "0106", "0113",
        ],
    ),
    (Category::City, "2011_09_26", Split::Test, &["0001", "0117"]),
    (Category::City, "2011_09_28", Split::Train, &["0001"]),
    (Category::City, "2011_09_29", Split::Train, &["0071"]),
    (
        Category::Road,
        "2011_09_26",
        Split::Train,
        &["0015", "0027", "0028", "0029", "0032", "0052"],
    ),
    (Category::Road, "2011_09_26", Split::Test, &["0070", "0101"]),
    (Category::Road, "2011_09_29", Split::Train, &["0004", "0016", "0042", "0047"]),
];

/// Every City/Road drive of the KITTI benchmark split, in table order.
pub fn kitti_drives() -> Vec<KittiDrive> {
    KITTI_TABLE
        .iter()
        .flat_map(|&(category, date, split, ids)| {
            ids.iter().map(move |id| KittiDrive {
                id: format!("{date}_drive_{id}"),
                category,
                split,
            })
        })
        .collect()
}

/// Drive id (`2011_09_26_drive_0001`) → split.
pub fn load_split_table(dataset: &str) -> Result<BTreeMap<String, Split>> {
    match dataset {
        "kitti" => Ok(kitti_drives().into_iter().map(|d| (d.id, d.split)).collect()),
        other => Err(Error::InvalidArgument(format!("no split table for dataset `{other}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts() {
        let drives = kitti_drives();
        assert_eq!(drives.len(), 33);
        assert_eq!(load_split_table("kitti").unwrap().len(), 33);
        assert!(load_split_table("nuimages").is_err());
    }
}
