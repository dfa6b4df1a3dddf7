//! The coupled state advanced by the time loop.

use crate::fluid::FluidState;
use crate::ions::IonState;
use crate::poisson::ElectroState;
use crate::Result;

#[derive(Clone, Debug)]
pub struct SystemState {
    pub ions: IonState,
    pub fluid: FluidState,
    /// Potential solved from the current `ions`; `electro.rho` matches them.
    pub electro: ElectroState,
}

impl SystemState {
    pub fn new(ions: IonState, fluid: FluidState, electro: ElectroState) -> Result<Self> {
        let g = *ions.grid();
        g.check_same(fluid.u.grid())?;
        g.check_same(electro.psi.grid())?;
        g.check_same(electro.rho.grid())?;
        Ok(Self { ions, fluid, electro })
    }

    pub fn grid(&self) -> &crate::Grid {
        self.ions.grid()
    }
}
