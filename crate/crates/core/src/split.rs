use crate::error::{Error, Result};

/// Disjoint train/validation/test node index sets, each sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Train,
    Val,
    Test,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Val => "val",
            Role::Test => "test",
        }
    }
}

impl std::str::FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Role::Train),
            "val" => Ok(Role::Val),
            "test" => Ok(Role::Test),
            other => Err(Error::Dataset(format!("unknown split `{other}`"))),
        }
    }
}

impl Split {
    pub fn new(mut train: Vec<usize>, mut val: Vec<usize>, mut test: Vec<usize>) -> Self {
        train.sort_unstable();
        val.sort_unstable();
        test.sort_unstable();
        Self { train, val, test }
    }

    pub fn from_roles(roles: &[Role]) -> Self {
        let pick = |want| roles.iter().enumerate().filter(|(_, &r)| r == want).map(|(i, _)| i).collect();
        Self {
            train: pick(Role::Train),
            val: pick(Role::Val),
            test: pick(Role::Test),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    /// Role of every node, checking that the three sets partition `0..n`.
    pub fn roles(&self, n: usize) -> Result<Vec<Role>> {
        let mut roles: Vec<Option<Role>> = vec![None; n];
        for (set, role) in [(&self.train, Role::Train), (&self.val, Role::Val), (&self.test, Role::Test)] {
            for &i in set {
                match roles.get_mut(i) {
                    None => return Err(Error::NodeOutOfRange { node: i, n }),
                    Some(Some(_)) => return Err(Error::Dataset(format!("node {i} appears in two splits"))),
                    Some(slot) => *slot = Some(role),
                }
            }
        }
        roles
            .into_iter()
            .enumerate()
            .map(|(i, r)| r.ok_or_else(|| Error::Dataset(format!("node {i} is in no split"))))
            .collect()
    }

    pub fn train_mask(&self, n: usize) -> Vec<bool> {
        let mut m = vec![false; n];
        for &i in &self.train {
            m[i] = true;
        }
        m
    }

    pub fn indices(&self, role: Role) -> &[usize] {
        match role {
            Role::Train => &self.train,
            Role::Val => &self.val,
            Role::Test => &self.test,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("node,split\n");
        if let Ok(roles) = self.roles(self.n_nodes()) {
            for (i, r) in roles.iter().enumerate() {
                s.push_str(&format!("{i},{}\n", r.as_str()));
            }
        }
        s
    }

    pub fn parse_csv(text: &str, path: Option<&std::path::Path>) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == "node,split" => {}
            _ => return Err(Error::parse(path, 1, "expected header `node,split`")),
        }
        let mut roles = Vec::new();
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let (node, role) = line
                .split_once(',')
                .ok_or_else(|| Error::parse(path, idx + 1, "expected `node,split`"))?;
            let node: usize = node
                .trim()
                .parse()
                .map_err(|_| Error::parse(path, idx + 1, "bad node id"))?;
            if node != roles.len() {
                return Err(Error::parse(path, idx + 1, format!("expected node {}", roles.len())));
            }
            roles.push(role.trim().parse().map_err(|e: Error| Error::parse(path, idx + 1, e.to_string()))?);
        }
        Ok(Self::from_roles(&roles))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roles_detect_overlap_and_gaps() {
        assert!(Split::new(vec![0, 1], vec![1], vec![2]).roles(3).is_err());
        assert!(Split::new(vec![0], vec![1], vec![]).roles(3).is_err());
        let s = Split::new(vec![2, 0], vec![1], vec![3]);
        assert_eq!(s.roles(4).unwrap(), vec![Role::Train, Role::Val, Role::Train, Role::Test]);
        assert_eq!(Split::parse_csv(&s.to_csv(), None).unwrap(), s);
    }
}
