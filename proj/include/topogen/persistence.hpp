#pragma once

#include <string>
#include <vector>

#include "topogen/image.hpp"

namespace topogen {

struct PixelCoord {
  int row = 0;
  int col = 0;
  bool operator==(const PixelCoord&) const = default;
};

/// One feature of the super-level-set filtration S(u) = { pixels >= u }.
///   dim 0: an 8-connected component of S(u); birth_px is the pixel where
///          the component first appears (its maximum), death_px the pixel
///          whose addition merges it into an older component.
///   dim 1: a hole (4-connected region of the complement not touching the
///          border); birth_px is the pixel that closes the surrounding
///          wall, death_px the minimum inside the hole where it fills in.
/// A dot is alive at threshold u iff birth >= u > death; essential dots
/// (never dying features) are alive iff birth >= u.
struct PersistentDot {
  int dim = 0;
  double birth = 0.0;
  double death = 0.0;
  PixelCoord birth_px;
  PixelCoord death_px;
  bool essential = false;

  double persistence() const { return birth - death; }
};

/// All dots of one homology dimension for one image, sorted by persistence
/// descending; ties broken by birth descending, then by row-major index of
/// birth_px ascending.
struct PersistenceDiagram {
  int dim = 0;
  int h = 0;
  int w = 0;
  double min_value = 0.0;
  double max_value = 0.0;
  std::vector<PersistentDot> dots;
};

/// 0-dimensional diagram: union-find sweep over pixels in decreasing value
/// order (ties broken by ascending row-major index), 8-connectivity.  When
/// components merge, the higher-birth one survives (ties: the one created
/// earlier in the sweep).  Exactly one essential dot remains; its death is
/// the global minimum value and its death_px the last pixel in sweep order.
PersistenceDiagram diagram_0d(const ImageGrid& img);

/// 1-dimensional diagram via the complement: pad the image with a one-pixel
/// border at -infinity, sweep sub-level sets in increasing value order with
/// 4-connectivity, and record component merges.  Each merge of a non-border
/// component yields a hole dot: birth = the wall value that closes the hole
/// (the current pixel), death = the minimum value inside it.  The border
/// component itself never dies and is not reported, so there are no
/// essential dots in dimension 1.
PersistenceDiagram diagram_1d(const ImageGrid& img);

/// Brute-force oracle: Betti number of S(u) = { pixels >= u } computed by
/// flood fill, with no persistence machinery.
///   dim 0: number of 8-connected components of S(u).
///   dim 1: number of 4-connected components of the complement that do not
///          touch the image border.
int betti_at(const ImageGrid& img, double u, int dim);

/// Count the dots of `d` alive at threshold u (essential: birth >= u;
/// otherwise birth >= u > death).  Must agree with betti_at everywhere.
int betti_from_diagram(const PersistenceDiagram& d, double u);

/// JSON array of dots in diagram order, each object holding dim, birth,
/// death, birth_px, death_px ([row, col]) and essential.
std::string diagram_to_json(const PersistenceDiagram& d);

/// Flood-fill labelling used by the oracle and the mask metrics.
///   mask: one flag per pixel, row-major; connectivity: 4 or 8.
/// Returns the component id per pixel (-1 outside the mask) and the number
/// of components.
int label_components(const std::vector<char>& mask, int h, int w, int connectivity,
                     std::vector<int>* labels_out);

}  // namespace topogen
