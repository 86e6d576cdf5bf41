// The flagship symbolic derivation: apply the quadratic differential rule to
// the square-root process and check the result against the known expansion,
// exactly, in rational arithmetic.

#include <cstdio>

#include "freecir/ito.hpp"

int main() {
  using namespace freecir::ito;

  RewriteContext ctx;
  ctx.declare_central("b");
  ctx.declare_inverse("V", "Vinv");

  // dV = (G/4) Vinv dt + Vinv (G/4) dt - (b/2) V dt + (sigma/4) dW + dW (sigma/4)
  // with G = a - (phi(sigma) sigma + sigma^2)/8.
  const char* dv =
      "(a - (phi(sigma)*sigma + sigma^2)/8)*(1/4)*Vinv*dt"
      " + (1/4)*Vinv*(a - (phi(sigma)*sigma + sigma^2)/8)*dt"
      " - (b/2)*V*dt + (sigma/4)*dW + dW*(sigma/4)";

  const DifferentialForm d = ito_differential(2, "V", parse_expression(dv, ctx), ctx);
  std::printf("d(V^2) =\n  %s\n\n", to_string(d).c_str());

  const char* expected =
      "(1/2)*(a - (phi(sigma)*sigma + sigma^2)/8)*dt"
      " + (1/4)*V*(a - (phi(sigma)*sigma + sigma^2)/8)*Vinv*dt"
      " + (1/4)*Vinv*(a - (phi(sigma)*sigma + sigma^2)/8)*V*dt"
      " - b*V^2*dt"
      " + (sigma*phi(sigma)/8 + sigma^2/16 + phi(sigma^2)/16)*dt"
      " + V*(sigma/4)*dW + V*dW*(sigma/4) + (sigma/4)*dW*V + dW*(sigma/4)*V";

  const EqualityResult eq = forms_equal(d, parse_expression(expected, ctx), ctx);
  std::printf("matches the hand expansion: %s\n", eq.equal ? "yes" : "NO");
  if (!eq.equal) std::printf("difference: %s\n", to_string(eq.difference).c_str());

  // The quadratic-variation contraction in isolation:
  const DifferentialForm cross = multiply_forms(
      parse_expression("(sigma/4)*dW", ctx), parse_expression("dW*(sigma/4)", ctx), ctx);
  std::printf("\n(sigma/4 dW)(dW sigma/4) = %s\n", to_string(cross).c_str());
  return eq.equal ? 0 : 1;
}
