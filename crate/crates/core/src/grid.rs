/// Values indexed by (subcarrier, user), stored subcarrier-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ToneGrid<T> {
    n_subcarriers: usize,
    n_users: usize,
    data: Vec<T>,
}

impl<T: Clone> ToneGrid<T> {
    pub fn filled(n_subcarriers: usize, n_users: usize, value: T) -> Self {
        Self {
            n_subcarriers,
            n_users,
            data: vec![value; n_subcarriers * n_users],
        }
    }
}

impl<T> ToneGrid<T> {
    /// Builds the grid by evaluating `f(i, k)` for every subcarrier `i` and user `k`.
    pub fn from_fn(
        n_subcarriers: usize,
        n_users: usize,
        mut f: impl FnMut(usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(n_subcarriers * n_users);
        for i in 0..n_subcarriers {
            for k in 0..n_users {
                data.push(f(i, k));
            }
        }
        Self {
            n_subcarriers,
            n_users,
            data,
        }
    }

    pub fn n_subcarriers(&self) -> usize {
        self.n_subcarriers
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    #[inline]
    pub fn get(&self, i: usize, k: usize) -> &T {
        debug_assert!(i < self.n_subcarriers && k < self.n_users);
        &self.data[i * self.n_users + k]
    }

    #[inline]
    pub fn get_mut(&mut self, i: usize, k: usize) -> &mut T {
        debug_assert!(i < self.n_subcarriers && k < self.n_users);
        &mut self.data[i * self.n_users + k]
    }

    /// All users on subcarrier `i`.
    pub fn tone(&self, i: usize) -> &[T] {
        &self.data[i * self.n_users..(i + 1) * self.n_users]
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.data.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.data.iter_mut()
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> ToneGrid<U> {
        ToneGrid {
            n_subcarriers: self.n_subcarriers,
            n_users: self.n_users,
            data: self.data.iter().map(f).collect(),
        }
    }
}
